// Live event feed: kernel events in seq order plus recommendation cards.
//
// The stream is one-way server push; reconnects resume from the last seen
// seq so a dropped connection (or the server's idle close) never duplicates
// rows. EventSource construction is injectable for tests.

import type { KernelEvent, Recommendation } from "./types.js";

export interface FeedItem {
  kind: "event" | "recommendation";
  event?: KernelEvent;
  recommendation?: Recommendation;
}

export interface FeedState {
  items: FeedItem[];
  lastSeq: number;
  seenSeqs: Set<number>;
}

export function emptyFeed(): FeedState {
  return { items: [], lastSeq: 0, seenSeqs: new Set() };
}

export function applyEvent(state: FeedState, event: KernelEvent): FeedState {
  if (state.seenSeqs.has(event.seq)) {
    return state; // reconnect replay: drop duplicates
  }
  const seen = new Set(state.seenSeqs);
  seen.add(event.seq);
  return {
    items: [...state.items, { kind: "event", event }],
    lastSeq: Math.max(state.lastSeq, event.seq),
    seenSeqs: seen,
  };
}

export function applyRecommendation(state: FeedState, rec: Recommendation): FeedState {
  return {
    ...state,
    items: [...state.items, { kind: "recommendation", recommendation: rec }],
  };
}

export function dismissRecommendation(state: FeedState, rec: Recommendation): FeedState {
  return {
    ...state,
    items: state.items.filter((i) => i.recommendation !== rec),
  };
}

// -- reconnecting stream ------------------------------------------------------

export interface EventSourceLike {
  addEventListener(type: string, listener: (ev: MessageEvent) => void): void;
  close(): void;
  onerror: ((ev: unknown) => void) | null;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface FeedHandlers {
  onEvent(event: KernelEvent): void;
  onRecommendation(rec: Recommendation): void;
}

export class ReconnectingFeed {
  private source: EventSourceLike | null = null;
  private closed = false;
  lastSeq = 0;

  constructor(
    private urlFor: (since: number) => string,
    private factory: EventSourceFactory,
    private handlers: FeedHandlers,
    private reconnectDelayMs = 500,
  ) {}

  connect(): void {
    if (this.closed) return;
    const source = this.factory(this.urlFor(this.lastSeq));
    this.source = source;
    source.addEventListener("kernel-event", (ev) => {
      const event = JSON.parse(ev.data) as KernelEvent;
      this.lastSeq = Math.max(this.lastSeq, event.seq);
      this.handlers.onEvent(event);
    });
    source.addEventListener("recommendation", (ev) => {
      this.handlers.onRecommendation(JSON.parse(ev.data) as Recommendation);
    });
    source.onerror = () => {
      source.close();
      if (!this.closed) {
        setTimeout(() => this.connect(), this.reconnectDelayMs);
      }
    };
  }

  close(): void {
    this.closed = true;
    this.source?.close();
  }
}

// -- rendering -----------------------------------------------------------------

export interface FeedActions {
  onAccept(rec: Recommendation): void;
  onDismiss(rec: Recommendation): void;
}

export function renderFeed(root: HTMLElement, state: FeedState, actions: FeedActions): void {
  root.textContent = "";
  if (state.items.length === 0) {
    const empty = document.createElement("div");
    empty.className = "feed-empty";
    empty.textContent = "no activity yet";
    root.appendChild(empty);
    return;
  }
  for (const item of state.items) {
    if (item.kind === "event" && item.event) {
      const row = document.createElement("div");
      row.className = `feed-row feed-${item.event.kind}`;
      const detail =
        item.event.kind === "rename"
          ? `${item.event.payload.old_path} -> ${item.event.path}`
          : item.event.path;
      row.textContent = `#${item.event.seq} ${item.event.kind} ${detail}`;
      root.appendChild(row);
    } else if (item.recommendation) {
      const rec = item.recommendation;
      const card = document.createElement("div");
      card.className = "recommendation-card";
      const msg = document.createElement("div");
      msg.textContent = rec.message;
      const accept = document.createElement("button");
      accept.className = "rec-accept";
      accept.textContent = "Yes, do it";
      accept.addEventListener("click", () => actions.onAccept(rec));
      const dismiss = document.createElement("button");
      dismiss.className = "rec-dismiss";
      dismiss.textContent = "Dismiss";
      dismiss.addEventListener("click", () => actions.onDismiss(rec));
      card.append(msg, accept, dismiss);
      root.appendChild(card);
    }
  }
}
