/** Typed client for the session service. The UI never computes anything the
 * backend knows; everything here is plain HTTP/JSON plumbing. */

export type Role = "User" | "System";
export type TurnKind =
  | "Prompt"
  | "Status"
  | "Error"
  | "ExamplesAvailable"
  | "Result";

export interface ChatTurnWire {
  seq: number;
  role: Role;
  kind: TurnKind;
  text: string;
  step: string;
  examples: string[];
}

export interface SessionStateWire {
  session_id: string;
  step: string;
  failed_step: string | null;
  busy: boolean;
  commands: string[];
  turn_count: number;
  package_ready: boolean;
}

export interface EventsWire {
  turns: ChatTurnWire[];
  busy: boolean;
}

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  async createSession(): Promise<SessionStateWire> {
    const res = await this.request("/sessions", { method: "POST" });
    return (await res.json()) as SessionStateWire;
  }

  async state(sessionId: string): Promise<SessionStateWire> {
    const res = await this.request(`/sessions/${sessionId}/state`);
    return (await res.json()) as SessionStateWire;
  }

  async events(sessionId: string, since: number): Promise<EventsWire> {
    const res = await this.request(
      `/sessions/${sessionId}/events?since=${since}`,
    );
    return (await res.json()) as EventsWire;
  }

  async upload(sessionId: string, archive: Blob): Promise<void> {
    await this.request(`/sessions/${sessionId}/upload`, {
      method: "POST",
      headers: { "content-type": "application/zip" },
      body: archive,
    });
  }

  async send(sessionId: string, text: string): Promise<void> {
    await this.request(`/sessions/${sessionId}/message`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  artifactUrl(sessionId: string): string {
    return `${this.base}/sessions/${sessionId}/artifact`;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await fetch(this.base + path, init);
    if (!res.ok) {
      let code = `Http${res.status}`;
      let message = res.statusText || `request failed with ${res.status}`;
      try {
        const body = (await res.json()) as {
          error?: { code?: string; message?: string };
        };
        if (body.error) {
          code = body.error.code ?? code;
          message = body.error.message ?? message;
        }
      } catch {
        // non-JSON error body; keep the HTTP fallback text
      }
      throw new ApiError(code, message, res.status);
    }
    return res;
  }
}
