// Pure view-model helpers. No fetches, no DOM: everything here is a
// function from server payloads to plain data the renderer can print.

import { METER_NAMES, type MeterName, type Meters, type Turn } from "./types.js";

export interface MeterView {
  name: MeterName;
  value: number;
  delta: number;
  arrow: "▲" | "▼" | "—";
}

export interface FeedEntry {
  round: number;
  userInput: string;
  narrative: string;
  imageRef: string | null;
  imagePrompt: string;
  latencyLabel: string;
  receivedAt: number | null;
  pending: boolean;
}

export interface ViewModel {
  characterName: string;
  meters: MeterView[];
  feed: FeedEntry[];
  chips: string[];
  inputEnabled: boolean;
  draft: string;
  notice: string | null;
}

/** Meter bars never render outside their 0-100 track. */
export function clampMeter(value: number): number {
  return Math.max(0, Math.min(100, Math.round(value)));
}

export function trendArrow(delta: number): MeterView["arrow"] {
  return delta > 0 ? "▲" : delta < 0 ? "▼" : "—";
}

export function meterViews(previous: Meters, current: Meters): MeterView[] {
  return METER_NAMES.map((name) => {
    const value = clampMeter(current[name]);
    const delta = value - clampMeter(previous[name]);
    return { name, value, delta, arrow: trendArrow(delta) };
  });
}

/** 980ms -> "0.98s" */
export function latencyBadge(ms: number): string {
  return (ms / 1000).toFixed(2) + "s";
}

/** Chip clicks only prefill the input; the player still submits language. */
export function environmentPrefill(characterName: string, environmentName: string): string {
  return `Take ${characterName} to ${environmentName}`;
}

export function feedEntry(turn: Turn, receivedAt: number | null = null): FeedEntry {
  return {
    round: turn.round_index,
    userInput: turn.user_input,
    narrative: turn.narrative,
    imageRef: turn.image_ref,
    imagePrompt: turn.image_prompt,
    latencyLabel: latencyBadge(turn.latency_ms),
    receivedAt,
    pending: false,
  };
}

export function pendingEntry(round: number, userInput: string): FeedEntry {
  return {
    round,
    userInput,
    narrative: "",
    imageRef: null,
    imagePrompt: "",
    latencyLabel: "",
    receivedAt: null,
    pending: true,
  };
}
