// Typed client for the assistant's JSON API. One method per route; no
// state is kept here beyond the base URL.

export interface ReplacementPair {
  original: string;
  replacement: string;
}

export interface StepScreen {
  kind: 'step';
  task_id: string;
  task_title: string;
  task_description: string;
  step_index: number;
  n_steps: number;
  step_text: string;
  requirements: string[];
}

export interface SearchResultItem {
  rank: number;
  id: string;
  title: string;
  description: string;
}

export interface SearchScreen {
  kind: 'search_results';
  items: SearchResultItem[];
}

export interface EmptyScreen {
  kind: 'none';
}

export type Screen = StepScreen | SearchScreen | EmptyScreen;

export interface TurnPayload {
  response: string;
  action: string | null;
  route: string;
  phase: string;
  current_step: number | null;
  screen: Screen;
  latency_ms: number;
  turn: number;
  fallback_reason: string | null;
  rejection: string | null;
  question_type: string | null;
  pending_replacement: ReplacementPair[] | null;
}

export interface SessionSnapshot {
  session_id: string;
  phase: string;
  task: { id: string; title: string } | null;
  current_step: number | null;
  step_text: string | null;
  n_steps: number | null;
  pending_replacement: ReplacementPair[] | null;
  search_results: { rank: number; id: string; title: string }[];
  turns: number;
  history: { speaker: string; text: string }[];
  screen: Screen;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

export class SessionExpiredError extends ApiError {
  constructor(message: string) {
    super(404, message);
    this.name = 'SessionExpiredError';
  }
}

async function readJson(response: Response): Promise<any> {
  if (response.ok) {
    return response.json();
  }
  let detail = response.statusText || `HTTP ${response.status}`;
  try {
    const body = await response.json();
    if (body && typeof body.detail === 'string') detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  if (response.status === 404) throw new SessionExpiredError(detail);
  throw new ApiError(response.status, detail);
}

/** What the UI needs from the service; ApiClient is the real transport. */
export interface AssistantApi {
  health(): Promise<{ status: string }>;
  createSession(): Promise<string>;
  getSession(sessionId: string): Promise<SessionSnapshot>;
  sendUtterance(sessionId: string, text: string): Promise<TurnPayload>;
  metrics(): Promise<Record<string, unknown>>;
}

export class ApiClient implements AssistantApi {
  private baseUrl: string;
  private fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  async health(): Promise<{ status: string }> {
    return readJson(await this.fetchImpl(`${this.baseUrl}/v1/health`));
  }

  async createSession(): Promise<string> {
    const body = await readJson(
      await this.fetchImpl(`${this.baseUrl}/v1/sessions`, { method: 'POST' }),
    );
    return body.session_id;
  }

  async getSession(sessionId: string): Promise<SessionSnapshot> {
    return readJson(
      await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}`),
    );
  }

  async sendUtterance(sessionId: string, text: string): Promise<TurnPayload> {
    return readJson(
      await this.fetchImpl(`${this.baseUrl}/v1/sessions/${sessionId}/utterances`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ text }),
      }),
    );
  }

  async metrics(): Promise<Record<string, unknown>> {
    return readJson(await this.fetchImpl(`${this.baseUrl}/v1/metrics`));
  }
}
