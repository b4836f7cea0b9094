// Shapes of the /v1 JSON payloads, mirrored from the game server.

export const METER_NAMES = ["hunger", "energy", "fun", "hygiene"] as const;
export type MeterName = (typeof METER_NAMES)[number];

export type Meters = Record<MeterName, number>;

export interface Profile {
  name: string;
  descriptor: string;
  personality: string;
  special_token: string;
}

export interface Environment {
  id: string;
  name: string;
  description: string;
  reference_image: string | null;
}

export interface Turn {
  round_index: number;
  user_input: string;
  narrative: string;
  image_prompt: string;
  environment_id: string | null;
  state_after: Meters;
  image_ref: string | null;
  latency_ms: number;
  client_token: string | null;
}

export interface SessionView {
  session_id: string;
  profile: Profile;
  state: Meters;
  initial_state: Meters;
  turn_count: number;
  environments: Environment[];
  created_at: number;
  updated_at: number;
}

// POST /v1/sessions returns the session view plus the setup turn.
export interface CreateResponse extends SessionView {
  turn: Turn;
  latency: Record<string, number>;
}

export interface TurnResponse {
  session_id: string;
  turn: Turn;
  state: Meters;
  latency: Record<string, number>;
  replayed: boolean;
}

export interface TurnsResponse {
  session_id: string;
  turns: Turn[];
  turn_count: number;
}

export interface CharacterForm {
  name: string;
  descriptor: string;
  personality: string;
  home: string;
}
