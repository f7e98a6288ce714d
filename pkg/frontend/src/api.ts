// Gateway client. The fetch function is injectable so tests can script the
// server side; the client itself holds no state beyond the base URL.

import type { Reply, SessionDoc } from "./types.js";

export type FetchFn = typeof fetch;

export class GatewayError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class GatewayClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchFn = fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, {
        headers: { "content-type": "application/json" },
        ...init,
      });
    } catch (err) {
      throw new GatewayError(0, `gateway unreachable: ${String(err)}`);
    }
    const body = await resp.text();
    if (!resp.ok) {
      throw new GatewayError(resp.status, body || resp.statusText);
    }
    return JSON.parse(body) as T;
  }

  createSession(workspace: string, username = "web"): Promise<{ session_id: string }> {
    return this.request("/v1/sessions", {
      method: "POST",
      body: JSON.stringify({ workspace, username }),
    });
  }

  getSession(sid: string): Promise<SessionDoc> {
    return this.request(`/v1/sessions/${sid}`);
  }

  sendMessage(sid: string, text: string): Promise<Reply> {
    return this.request(`/v1/sessions/${sid}/messages`, {
      method: "POST",
      body: JSON.stringify({ text }),
    });
  }

  decideCheckpoint(
    sid: string,
    planId: string,
    index: number,
    decision: "approve" | "reject",
  ): Promise<Reply> {
    return this.request(`/v1/sessions/${sid}/checkpoints/${planId}/${index}`, {
      method: "POST",
      body: JSON.stringify({ decision }),
    });
  }

  eventsUrl(sid: string, since: number): string {
    return `${this.baseUrl}/v1/sessions/${sid}/events?since=${since}`;
  }
}
