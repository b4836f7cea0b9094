// Replays recorded /v1 transcripts so UI tests run against real response
// bodies without a live model. Idempotency tokens behave like the real
// server: a token seen twice returns the recorded replay body, and the
// environments listing grows as turn posts land.

import { createServer, type IncomingMessage, type Server, type ServerResponse } from "node:http";
import { readFileSync } from "node:fs";

interface RecordedCall {
  method: string;
  path: string;
  status: number;
  body: any;
}

type Recordings = Record<string, RecordedCall>;

export type FailureKind = "409" | "502" | "drop";

const RECORDED: Recordings = JSON.parse(
  readFileSync(new URL("./fixtures/recorded.json", import.meta.url), "utf8"),
);

export const FIXTURE = {
  sessionId: RECORDED.create!.body.session_id as string,
  create: RECORDED.create!.body,
  turn1: RECORDED.turn1!.body,
  turn1Replay: RECORDED.turn1_replay!.body,
  turn2: RECORDED.turn2!.body,
  finalSession: RECORDED.session!.body,
  finalTurns: RECORDED.turns!.body,
  envSnapshots: [
    RECORDED.environments_0!.body,
    RECORDED.environments_1!.body,
    RECORDED.environments_2!.body,
  ],
};

export class FixtureServer {
  url = "";
  /** Every turn token received, in order, including repeats. */
  turnPosts: string[] = [];
  requests: Array<{ method: string; path: string }> = [];
  /** Arms a one-shot failure for the next mutating request. */
  failNext: FailureKind | null = null;

  private server: Server | null = null;
  private seenTokens = new Set<string>();

  async start(): Promise<string> {
    this.server = createServer((req, res) => {
      this.handle(req, res).catch(() => {
        res.writeHead(500).end(JSON.stringify({ error: "fixture server crashed" }));
      });
    });
    await new Promise<void>((resolve) => this.server!.listen(0, "127.0.0.1", resolve));
    const addr = this.server.address();
    if (addr === null || typeof addr === "string") throw new Error("no address");
    this.url = `http://127.0.0.1:${addr.port}`;
    return this.url;
  }

  async stop(): Promise<void> {
    if (this.server) await new Promise<void>((resolve) => this.server!.close(() => resolve()));
  }

  private json(res: ServerResponse, status: number, body: unknown): void {
    res.writeHead(status, { "content-type": "application/json" });
    res.end(JSON.stringify(body));
  }

  private async readBody(req: IncomingMessage): Promise<any> {
    const chunks: Buffer[] = [];
    for await (const chunk of req) chunks.push(chunk as Buffer);
    const raw = Buffer.concat(chunks).toString("utf8");
    return raw ? JSON.parse(raw) : {};
  }

  private async handle(req: IncomingMessage, res: ServerResponse): Promise<void> {
    const method = req.method ?? "GET";
    const path = (req.url ?? "/").split("?")[0]!;
    this.requests.push({ method, path });
    const sid = FIXTURE.sessionId;

    if (method === "GET" && path === "/healthz") {
      return this.json(res, 200, RECORDED.health!.body);
    }

    if (method === "POST" && path === "/v1/sessions") {
      const body = await this.readBody(req);
      if (this.takeFailure(req, res)) return;
      const profile = body.profile ?? {};
      for (const field of ["name", "descriptor", "personality"]) {
        if (typeof profile[field] !== "string" || !profile[field].trim()) {
          return this.json(res, 400, { error: `profile: ${field} must be non-empty`, fields: [field] });
        }
      }
      return this.json(res, 201, FIXTURE.create);
    }

    if (method === "POST" && path === `/v1/sessions/${sid}/turns`) {
      const body = await this.readBody(req);
      const token = String(body.client_turn_token ?? "");
      if (this.takeFailure(req, res, token)) return;
      this.turnPosts.push(token);
      const repeat = this.seenTokens.has(token);
      this.seenTokens.add(token);
      if (token === "fix-tok-1") return this.json(res, 200, repeat ? FIXTURE.turn1Replay : FIXTURE.turn1);
      if (token === "fix-tok-2") return this.json(res, 200, FIXTURE.turn2);
      // An unrecorded token means the client drifted from the transcript.
      return this.json(res, 500, { error: `unrecorded token: ${token}` });
    }

    if (method === "GET" && path === `/v1/sessions/${sid}`) {
      return this.json(res, 200, FIXTURE.finalSession);
    }
    if (method === "GET" && path === `/v1/sessions/${sid}/turns`) {
      return this.json(res, 200, FIXTURE.finalTurns);
    }
    if (method === "GET" && path === `/v1/sessions/${sid}/environments`) {
      const snapshot = Math.min(this.seenTokens.size, FIXTURE.envSnapshots.length - 1);
      return this.json(res, 200, FIXTURE.envSnapshots[snapshot]);
    }

    if (method === "POST" && path.endsWith("/turns")) {
      return this.json(res, 404, { error: "unknown session" });
    }
    if (method === "GET" && path.startsWith("/v1/sessions/")) {
      return this.json(res, 404, { error: "unknown session" });
    }
    this.json(res, 404, { error: `unrecorded route: ${method} ${path}` });
  }

  /** Applies an armed one-shot failure. Returns true when it consumed the request. */
  private takeFailure(req: IncomingMessage, res: ServerResponse, token?: string): boolean {
    const kind = this.failNext;
    if (!kind) return false;
    this.failNext = null;
    if (kind === "409") {
      this.json(res, 409, { error: "turn already in flight" });
    } else if (kind === "502") {
      this.json(res, 502, { error: "world model failure", trace_id: "fix-trace-99" });
    } else {
      // Simulate a response lost on the wire after the server committed the
      // turn: the token counts as seen, then the socket dies.
      if (token) {
        this.turnPosts.push(token);
        this.seenTokens.add(token);
      }
      req.socket.destroy();
    }
    return true;
  }
}
