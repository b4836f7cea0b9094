import type {
  CharacterForm,
  CreateResponse,
  Environment,
  SessionView,
  TurnResponse,
  TurnsResponse,
} from "./types.js";

export class ApiError extends Error {
  status: number;
  fields: string[];
  traceId: string | null;

  constructor(status: number, message: string, fields: string[] = [], traceId: string | null = null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.fields = fields;
    this.traceId = traceId;
  }
}

type FetchLike = typeof fetch;

/** Thin client for the documented /v1 endpoints. Nothing else. */
export class ApiClient {
  private baseUrl: string;
  private fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn: FetchLike = fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  async createSession(form: CharacterForm): Promise<CreateResponse> {
    const environments = form.home.trim() ? [{ name: form.home.trim() }] : [];
    return this.request<CreateResponse>("POST", "/v1/sessions", {
      profile: {
        name: form.name.trim(),
        descriptor: form.descriptor.trim(),
        personality: form.personality.trim(),
      },
      environments,
    });
  }

  async getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>("GET", `/v1/sessions/${sessionId}`);
  }

  async getTurns(sessionId: string): Promise<TurnsResponse> {
    return this.request<TurnsResponse>("GET", `/v1/sessions/${sessionId}/turns`);
  }

  async getEnvironments(sessionId: string): Promise<Environment[]> {
    const body = await this.request<{ environments: Environment[] }>(
      "GET",
      `/v1/sessions/${sessionId}/environments`,
    );
    return body.environments;
  }

  /**
   * Posts one turn. On a network failure (no HTTP response) the request is
   * retried once with the same idempotency token, which the server contract
   * makes safe: a token that already ran replays the stored turn.
   */
  async submitTurn(sessionId: string, userInput: string, token: string): Promise<TurnResponse> {
    const path = `/v1/sessions/${sessionId}/turns`;
    const body = { user_input: userInput, client_turn_token: token };
    try {
      return await this.request<TurnResponse>("POST", path, body);
    } catch (err) {
      if (err instanceof ApiError) throw err;
      return await this.request<TurnResponse>("POST", path, body);
    }
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let data: any = {};
    try {
      data = await res.json();
    } catch {
      // error responses are JSON per contract; anything else maps below
    }
    if (!res.ok) {
      throw new ApiError(
        res.status,
        typeof data.error === "string" ? data.error : `request failed (${res.status})`,
        Array.isArray(data.fields) ? data.fields : [],
        typeof data.trace_id === "string" ? data.trace_id : null,
      );
    }
    return data as T;
  }
}

/** Fresh idempotency token for one user-initiated turn submission. */
export function newTurnToken(): string {
  if (typeof crypto !== "undefined" && typeof crypto.randomUUID === "function") {
    return crypto.randomUUID();
  }
  return "tok-" + Math.random().toString(36).slice(2) + Date.now().toString(36);
}
