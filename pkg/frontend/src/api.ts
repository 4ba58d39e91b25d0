/** Typed client for the review service's JSON API. Every mutation in the
 * app goes through this module; there are no other endpoints. */

export type Status = "pending" | "accepted" | "rejected" | "revised" | "disputed";
export type Action = "accept" | "reject" | "revise";

export interface HighlightSegment {
  text: string;
  changed: boolean;
}

export interface CandidateBase {
  interaction_id: string;
  turn_index: number;
  utterances: string[];
  prev_sql: string;
}

export interface DecisionRecord {
  candidate_id: string;
  reviewer: string;
  action: Action;
  revised_utterance?: string;
  timestamp: string;
}

export interface Candidate {
  id: string;
  db_id: string;
  base: CandidateBase;
  new_sql: string;
  base_template_hash: string;
  modification_template_hash: string;
  draft_utterance: string;
  status: Status;
  final_utterance: string | null;
  reviews: DecisionRecord[];
  /** server-computed diff of prev_sql -> new_sql; the client never parses SQL */
  highlight: HighlightSegment[];
}

export interface Stats {
  pending: number;
  accepted: number;
  revised: number;
  rejected: number;
  disputed: number;
  total: number;
}

export interface DecisionRequest {
  reviewer: string;
  action: Action;
  revised_utterance?: string;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(resp: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(resp.status, code, message);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      throw await parseError(resp);
    }
    return (await resp.json()) as T;
  }

  listCandidates(filters: { status?: string; reviewer?: string } = {}): Promise<Candidate[]> {
    const params = new URLSearchParams();
    if (filters.status && filters.status !== "all") params.set("status", filters.status);
    if (filters.reviewer) params.set("reviewer", filters.reviewer);
    const qs = params.toString();
    return this.request<Candidate[]>(`/api/candidates${qs ? "?" + qs : ""}`);
  }

  getCandidate(id: string): Promise<Candidate> {
    return this.request<Candidate>(`/api/candidates/${encodeURIComponent(id)}`);
  }

  postDecision(id: string, decision: DecisionRequest): Promise<Candidate> {
    return this.request<Candidate>(`/api/candidates/${encodeURIComponent(id)}/decisions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(decision),
    });
  }

  stats(): Promise<Stats> {
    return this.request<Stats>("/api/stats");
  }
}
