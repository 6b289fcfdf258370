// Typed client for the chat service HTTP API. Field names mirror the wire
// format exactly; every non-2xx reply is surfaced as an ApiError carrying
// the server's status code and `detail` message.

export type KnowledgeVariant = "none" | "text" | "table" | "graph";

export type Knowledge =
  | { variant: "none" }
  | { variant: "text"; paragraph: string }
  | { variant: "table"; rows: [string, string][] }
  | { variant: "graph"; triples: [string, string, string][] };

export interface SkillInfo {
  skill_id: number;
  name: string;
  family: string;
  knowledge: KnowledgeVariant;
}

export interface Candidate {
  text: string;
  score: number;
  chosen: boolean;
}

export interface ChatRequest {
  text: string;
  session_id?: string;
  mode?: "auto" | "manual";
  skill_id?: number;
  style_id?: number;
}

export interface ChatResponse {
  session_id: string;
  text: string;
  skill_id: number;
  confidence: number | null;
  knowledge: Knowledge;
  candidates: Candidate[] | null;
  filtered: boolean;
}

export interface TranscriptEntry {
  speaker: "user" | "system";
  text: string;
  skill_id: number | null;
  knowledge: Knowledge | null;
}

export interface SessionView {
  session_id: string;
  mode: "auto" | "manual";
  skill_id: number | null;
  style_id: number | null;
  transcript: TranscriptEntry[];
}

export type FetchLike = typeof fetch;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function readError(res: Response): Promise<ApiError> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

export class ChatApi {
  constructor(
    private baseUrl = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!res.ok) throw await readError(res);
    return res.json() as Promise<T>;
  }

  skills(): Promise<SkillInfo[]> {
    return this.request("/api/skills");
  }

  chat(req: ChatRequest): Promise<ChatResponse> {
    return this.request("/api/chat", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  session(id: string): Promise<SessionView> {
    return this.request(`/api/session/${encodeURIComponent(id)}`);
  }

  deleteSession(id: string): Promise<{ deleted: string }> {
    return this.request(`/api/session/${encodeURIComponent(id)}`, {
      method: "DELETE",
    });
  }
}
