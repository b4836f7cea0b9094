import { afterEach, beforeEach, describe, expect, it } from "vitest";
import { ApiClient, ApiError, newTurnToken } from "../src/api.js";
import { FIXTURE, FixtureServer } from "./fixture-server.js";

let fx: FixtureServer;
let api: ApiClient;

beforeEach(async () => {
  fx = new FixtureServer();
  await fx.start();
  api = new ApiClient(fx.url);
});

afterEach(async () => {
  await fx.stop();
});

describe("error mapping", () => {
  it("carries status, message, and fields on a 400", async () => {
    const err = await api
      .createSession({ name: "", descriptor: "d", personality: "p", home: "" })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.fields).toEqual(["name"]);
    expect(err.message).toContain("name");
  });

  it("maps unknown sessions to a 404", async () => {
    await expect(api.getSession("sess-nope")).rejects.toMatchObject({ status: 404 });
  });

  it("carries the trace id on a 502", async () => {
    fx.failNext = "502";
    const err = await api
      .createSession({ name: "n", descriptor: "d", personality: "p", home: "" })
      .catch((e) => e);
    expect(err.status).toBe(502);
    expect(err.traceId).toBe("fix-trace-99");
  });
});

describe("turn submission", () => {
  it("retries once with the same token after a network failure", async () => {
    fx.failNext = "drop";
    const res = await api.submitTurn(FIXTURE.sessionId, "go outside", "fix-tok-1");
    expect(res.replayed).toBe(true);
    expect(res.turn.round_index).toBe(1);
    expect(fx.turnPosts).toEqual(["fix-tok-1", "fix-tok-1"]);
  });

  it("does not retry HTTP errors", async () => {
    fx.failNext = "409";
    await expect(api.submitTurn(FIXTURE.sessionId, "go", "fix-tok-1")).rejects.toMatchObject({
      status: 409,
    });
    expect(fx.turnPosts).toEqual([]);
  });
});

describe("idempotency tokens", () => {
  it("are unique per call", () => {
    const seen = new Set(Array.from({ length: 1000 }, () => newTurnToken()));
    expect(seen.size).toBe(1000);
  });
});

describe("reads", () => {
  it("lists turns and environments for a recorded session", async () => {
    const turns = await api.getTurns(FIXTURE.sessionId);
    expect(turns.turn_count).toBeGreaterThanOrEqual(1);
    expect(turns.turns[0]!.round_index).toBe(0);

    const envs = await api.getEnvironments(FIXTURE.sessionId);
    expect(envs.map((e) => e.name)).toContain("Cozy Home");
  });
});
