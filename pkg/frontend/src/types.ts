// Wire types mirroring the gateway's JSON documents.

export interface DiffFile {
  path: string;
  old_path?: string;
  text: string;
}

export interface DiffDoc {
  files: DiffFile[];
  summary: Record<string, number>;
}

export interface PendingCheckpoint {
  plan_id: string;
  index: number;
}

export interface Clarification {
  slot: string;
  question: string;
}

export interface Reply {
  text: string;
  diff: DiffDoc | null;
  pending_checkpoint: PendingCheckpoint | null;
  clarification: Clarification | null;
  plan_id: string | null;
  status: string;
}

export interface TranscriptTurn {
  speaker: "user" | "system";
  text: string;
  plan_id?: string | null;
}

export interface SessionDoc {
  session: {
    id: string;
    workspace_root: string;
    pending: {
      awaiting: "approval" | "clarification";
      pending_index: number;
      plan: { id: string };
    } | null;
  };
  transcript: TranscriptTurn[];
}

export interface KernelEvent {
  schema_version: number;
  trigger_id: string;
  kind: string;
  path: string;
  timestamp_ms: number;
  seq: number;
  payload: { size_bytes?: number; old_path?: string };
}

export interface Recommendation {
  message: string;
  accept_message: string;
  directory: string;
  count: number;
  last_seq: number;
}
