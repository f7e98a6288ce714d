// Application wiring: composer -> gateway -> transcript; stream -> feed.
//
// After every action the transcript is re-fetched from the server, so the
// view is always a pure render of server state; the reply only contributes
// the pending-action / clarification affordances.

import { GatewayClient, GatewayError } from "./api.js";
import {
  applyEvent,
  applyRecommendation,
  dismissRecommendation,
  emptyFeed,
  FeedState,
  ReconnectingFeed,
  renderFeed,
  type EventSourceFactory,
} from "./feed.js";
import {
  applyReply,
  emptyTranscript,
  fromSession,
  renderTranscript,
  TranscriptState,
  withError,
} from "./transcript.js";
import type { Recommendation, Reply } from "./types.js";

export interface AppElements {
  transcript: HTMLElement;
  feed: HTMLElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  status: HTMLElement;
}

export class App {
  transcript: TranscriptState = emptyTranscript();
  feed: FeedState = emptyFeed();
  private stream: ReconnectingFeed | null = null;

  constructor(
    private els: AppElements,
    private client: GatewayClient,
    private sid: string,
    private eventSourceFactory: EventSourceFactory,
  ) {}

  async start(): Promise<void> {
    this.els.send.addEventListener("click", () => void this.submitMessage());
    this.els.input.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") void this.submitMessage();
    });
    await this.refresh(null);
    this.stream = new ReconnectingFeed(
      (since) => this.client.eventsUrl(this.sid, since),
      this.eventSourceFactory,
      {
        onEvent: (event) => {
          this.feed = applyEvent(this.feed, event);
          this.renderFeedPane();
        },
        onRecommendation: (rec) => {
          this.feed = applyRecommendation(this.feed, rec);
          this.renderFeedPane();
        },
      },
    );
    this.stream.connect();
  }

  stop(): void {
    this.stream?.close();
  }

  // -- actions ---------------------------------------------------------------

  async submitMessage(): Promise<void> {
    const text = this.els.input.value.trim();
    if (!text) return;
    await this.perform(() => this.client.sendMessage(this.sid, text));
    this.els.input.value = "";
  }

  async approve(planId: string, index: number): Promise<void> {
    await this.perform(() =>
      this.client.decideCheckpoint(this.sid, planId, index, "approve"),
    );
  }

  async reject(planId: string, index: number): Promise<void> {
    await this.perform(() =>
      this.client.decideCheckpoint(this.sid, planId, index, "reject"),
    );
  }

  async clarify(answer: string): Promise<void> {
    await this.perform(() => this.client.sendMessage(this.sid, answer));
  }

  async acceptRecommendation(rec: Recommendation): Promise<void> {
    this.feed = dismissRecommendation(this.feed, rec);
    this.renderFeedPane();
    await this.perform(() => this.client.sendMessage(this.sid, rec.accept_message));
  }

  dismiss(rec: Recommendation): void {
    this.feed = dismissRecommendation(this.feed, rec);
    this.renderFeedPane();
  }

  // -- internals ----------------------------------------------------------------

  private async perform(call: () => Promise<Reply>): Promise<void> {
    this.setStatus("working…");
    try {
      const reply = await call();
      await this.refresh(reply);
      this.setStatus(reply.status);
    } catch (err) {
      // no queued sends: surface the failure, keep the old server state
      const message =
        err instanceof GatewayError && err.status === 0
          ? "disconnected: the gateway is unreachable; message not sent"
          : `request failed: ${String(err)}`;
      this.transcript = withError(this.transcript, message);
      this.renderTranscriptPane();
      this.setStatus("error");
    }
  }

  private async refresh(reply: Reply | null): Promise<void> {
    const doc = await this.client.getSession(this.sid);
    let state = fromSession(doc);
    if (reply) {
      state = { ...applyReply(state, reply), turns: state.turns };
    }
    this.transcript = state;
    this.renderTranscriptPane();
  }

  private renderTranscriptPane(): void {
    renderTranscript(this.els.transcript, this.transcript, {
      onApprove: (a) => void this.approve(a.planId, a.index),
      onReject: (a) => void this.reject(a.planId, a.index),
      onClarify: (answer) => void this.clarify(answer),
    });
  }

  private renderFeedPane(): void {
    renderFeed(this.els.feed, this.feed, {
      onAccept: (rec) => void this.acceptRecommendation(rec),
      onDismiss: (rec) => this.dismiss(rec),
    });
  }

  private setStatus(text: string): void {
    this.els.status.textContent = text;
  }
}

export async function mountApp(
  root: HTMLElement,
  client: GatewayClient,
  sid: string,
  eventSourceFactory: EventSourceFactory,
): Promise<App> {
  root.innerHTML = `
    <div class="layout">
      <section class="chat">
        <div class="transcript" id="transcript"></div>
        <div class="composer">
          <input id="composer-input" placeholder="what should I do?" />
          <button id="composer-send">Send</button>
          <span id="status" class="status"></span>
        </div>
      </section>
      <aside class="events">
        <h2>activity</h2>
        <div class="feed" id="feed"></div>
      </aside>
    </div>`;
  const app = new App(
    {
      transcript: root.querySelector("#transcript")!,
      feed: root.querySelector("#feed")!,
      input: root.querySelector("#composer-input")!,
      send: root.querySelector("#composer-send")!,
      status: root.querySelector("#status")!,
    },
    client,
    sid,
    eventSourceFactory,
  );
  await app.start();
  return app;
}

// Browser bootstrap: session id from the URL hash, or create one.
export async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const base = new URLSearchParams(location.search).get("server") ??
    `${location.protocol}//${location.hostname}:8765`;
  const client = new GatewayClient(base);
  let sid = location.hash.startsWith("#sid=") ? location.hash.slice(5) : "";
  if (!sid) {
    const workspace = prompt("workspace name", "scratch") ?? "scratch";
    const created = await client.createSession(workspace);
    sid = created.session_id;
    location.hash = `sid=${sid}`;
  }
  await mountApp(root, client, sid, (url) => new EventSource(url));
}

declare global {
  interface Window {
    perosBoot?: () => Promise<void>;
  }
}

if (typeof window !== "undefined") {
  window.perosBoot = boot;
}
