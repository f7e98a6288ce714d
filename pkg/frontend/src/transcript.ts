// Transcript state and rendering.
//
// The client is deliberately thin: transcript items are rebuilt from server
// data after every completed response (no optimistic updates), so reloading
// the page reproduces the exact same view. At most one pending action is
// rendered at a time, mirroring the session invariant.

import type { Reply, SessionDoc, TranscriptTurn } from "./types.js";

export interface PendingAction {
  planId: string;
  index: number;
}

export interface TranscriptState {
  turns: TranscriptTurn[];
  pendingAction: PendingAction | null;
  clarification: { slot: string; question: string } | null;
  error: string | null;
}

export function emptyTranscript(): TranscriptState {
  return { turns: [], pendingAction: null, clarification: null, error: null };
}

export function fromSession(doc: SessionDoc): TranscriptState {
  const pending = doc.session.pending;
  return {
    turns: doc.transcript.slice(),
    pendingAction:
      pending && pending.awaiting === "approval"
        ? { planId: pending.plan.id, index: pending.pending_index }
        : null,
    clarification: null,
    error: null,
  };
}

export function applyReply(state: TranscriptState, reply: Reply): TranscriptState {
  return {
    turns: state.turns,
    pendingAction: reply.pending_checkpoint
      ? { planId: reply.pending_checkpoint.plan_id, index: reply.pending_checkpoint.index }
      : null,
    clarification: reply.clarification
      ? { slot: reply.clarification.slot, question: reply.clarification.question }
      : null,
    error: null,
  };
}

export function withError(state: TranscriptState, message: string): TranscriptState {
  return { ...state, error: message };
}

const DIFF_MARKERS = ["--- ", "+++ ", "@@ ", "Binary files "];

function splitDiff(text: string): { prose: string; diff: string } {
  const lines = text.split("\n");
  const prose: string[] = [];
  const diff: string[] = [];
  for (const line of lines) {
    if (
      DIFF_MARKERS.some((m) => line.startsWith(m)) ||
      ((line.startsWith("+") || line.startsWith("-")) && diff.length > 0)
    ) {
      diff.push(line);
    } else {
      prose.push(line);
    }
  }
  return { prose: prose.join("\n").trim(), diff: diff.join("\n").trim() };
}

export interface TranscriptHandlers {
  onApprove(action: PendingAction): void;
  onReject(action: PendingAction): void;
  onClarify(answer: string): void;
}

export function renderTranscript(
  root: HTMLElement,
  state: TranscriptState,
  handlers: TranscriptHandlers,
): void {
  root.textContent = "";
  for (const turn of state.turns) {
    const bubble = document.createElement("div");
    bubble.className = `bubble ${turn.speaker}`;
    const { prose, diff } = splitDiff(turn.text);
    const text = document.createElement("div");
    text.className = "bubble-text";
    text.textContent = prose || turn.text;
    bubble.appendChild(text);
    if (diff) {
      const pre = document.createElement("pre");
      pre.className = "diff";
      pre.textContent = diff;
      bubble.appendChild(pre);
    }
    root.appendChild(bubble);
  }

  if (state.pendingAction) {
    const action = state.pendingAction;
    const bar = document.createElement("div");
    bar.className = "pending-action";
    const label = document.createElement("span");
    label.textContent = `Approve step ${action.index}?`;
    const approve = document.createElement("button");
    approve.className = "approve";
    approve.textContent = "Approve";
    approve.addEventListener("click", () => handlers.onApprove(action));
    const reject = document.createElement("button");
    reject.className = "reject";
    reject.textContent = "Reject & revert";
    reject.addEventListener("click", () => handlers.onReject(action));
    bar.append(label, approve, reject);
    root.appendChild(bar);
  }

  if (state.clarification) {
    const box = document.createElement("div");
    box.className = "clarification";
    const q = document.createElement("div");
    q.textContent = state.clarification.question;
    const input = document.createElement("input");
    input.className = "clarify-input";
    input.placeholder = "your answer";
    const send = document.createElement("button");
    send.className = "clarify-send";
    send.textContent = "Answer";
    send.addEventListener("click", () => {
      if (input.value.trim()) handlers.onClarify(input.value.trim());
    });
    box.append(q, input, send);
    root.appendChild(box);
  }

  if (state.error) {
    const err = document.createElement("div");
    err.className = "error";
    err.textContent = state.error;
    root.appendChild(err);
  }
}
