import { ApiClient, ApiError, newTurnToken } from "./api.js";
import { renderApp } from "./render.js";
import {
  environmentPrefill,
  feedEntry,
  meterViews,
  pendingEntry,
  type ViewModel,
} from "./view.js";
import type { CharacterForm, Environment, SessionView, Turn } from "./types.js";

export interface AppDeps {
  api: ApiClient;
  /** Injectable so tests can pin tokens; defaults to random UUIDs. */
  tokens?: () => string;
  clock?: () => number;
}

const EMPTY_FORM: CharacterForm = { name: "", descriptor: "", personality: "", home: "" };

/**
 * Holds all client state and drives the API. One in-flight turn at a time,
 * mirroring the server's per-session lock; the only state that cannot be
 * rebuilt from GET endpoints is the draft input and receive timestamps.
 */
export class App {
  private api: ApiClient;
  private tokens: () => string;
  private clock: () => number;

  form: CharacterForm = { ...EMPTY_FORM };
  formErrors: Partial<Record<string, string>> = {};
  banner: string | null = null;

  session: SessionView | null = null;
  private turns: Turn[] = [];
  private receivedAt = new Map<number, number>();
  private environments: Environment[] = [];
  private draft = "";
  private inFlight = false;
  private pendingInput: string | null = null;
  private notice: string | null = null;

  constructor(deps: AppDeps) {
    this.api = deps.api;
    this.tokens = deps.tokens ?? newTurnToken;
    this.clock = deps.clock ?? Date.now;
  }

  setFormField(field: keyof CharacterForm, value: string): void {
    this.form[field] = value;
    delete this.formErrors[field];
  }

  /** Client-side validation: no request leaves with an empty required field. */
  private validateForm(): boolean {
    this.formErrors = {};
    for (const field of ["name", "descriptor", "personality"] as const) {
      if (!this.form[field].trim()) {
        this.formErrors[field] = "required";
      }
    }
    return Object.keys(this.formErrors).length === 0;
  }

  async createCharacter(): Promise<void> {
    if (this.session || !this.validateForm()) return;
    this.banner = null;
    try {
      const created = await this.api.createSession(this.form);
      this.session = created;
      this.turns = [created.turn];
      this.receivedAt.set(created.turn.round_index, this.clock());
      this.environments = created.environments;
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        // Server-side rejection lands on the named field.
        for (const field of err.fields) this.formErrors[field] = err.message;
        if (err.fields.length === 0) this.banner = err.message;
      } else if (err instanceof ApiError) {
        const trace = err.traceId ? ` (trace ${err.traceId})` : "";
        this.banner = `The world is not answering${trace}. Your character is safe below.`;
      } else {
        this.banner = "Network error. Your character is safe below.";
      }
    }
  }

  async retryCreate(): Promise<void> {
    this.banner = null;
    await this.createCharacter();
  }

  setDraft(text: string): void {
    this.draft = text;
  }

  clickChip(environmentName: string): void {
    if (!this.session || this.inFlight) return;
    this.draft = environmentPrefill(this.session.profile.name, environmentName);
  }

  async submitTurn(): Promise<void> {
    if (!this.session || this.inFlight) return;
    const text = this.draft.trim();
    if (!text) return;

    this.inFlight = true;
    this.pendingInput = text;
    this.notice = null;
    const token = this.tokens();
    try {
      const res = await this.api.submitTurn(this.session.session_id, text, token);
      // Replays and retries resolve to the same round; never append it twice.
      if (!this.turns.some((t) => t.round_index === res.turn.round_index)) {
        this.turns.push(res.turn);
        this.receivedAt.set(res.turn.round_index, this.clock());
      }
      this.session = { ...this.session, state: res.state, turn_count: this.turns.length };
      this.environments = await this.api.getEnvironments(this.session.session_id);
      this.draft = "";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.notice = "A turn is already running. Give it a moment, then send again.";
      } else if (err instanceof ApiError) {
        const trace = err.traceId ? ` (trace ${err.traceId})` : "";
        this.notice = `${err.message}${trace}`;
      } else {
        this.notice = "Network error. Nothing was lost; send again.";
      }
      // Draft stays put so the player can resubmit.
    } finally {
      this.inFlight = false;
      this.pendingInput = null;
    }
  }

  /** Rebuilds the whole view from GET endpoints; used on page reload. */
  async loadSession(sessionId: string): Promise<void> {
    const [session, turns, environments] = await Promise.all([
      this.api.getSession(sessionId),
      this.api.getTurns(sessionId),
      this.api.getEnvironments(sessionId),
    ]);
    this.session = session;
    this.turns = turns.turns;
    this.environments = environments;
  }

  viewModel(): ViewModel | null {
    if (!this.session) return null;
    const last = this.turns[this.turns.length - 1];
    const prev =
      this.turns.length >= 2
        ? this.turns[this.turns.length - 2]!.state_after
        : this.session.initial_state;
    const feed = this.turns.map((t) => feedEntry(t, this.receivedAt.get(t.round_index) ?? null));
    if (this.pendingInput !== null && last) {
      feed.push(pendingEntry(last.round_index + 1, this.pendingInput));
    }
    return {
      characterName: this.session.profile.name,
      meters: meterViews(prev, last ? last.state_after : this.session.state),
      feed,
      chips: this.environments.map((e) => e.name),
      inputEnabled: !this.inFlight,
      draft: this.draft,
      notice: this.notice,
    };
  }

  render(): string {
    return renderApp(this.viewModel(), this.form, this.formErrors, this.banner);
  }
}
