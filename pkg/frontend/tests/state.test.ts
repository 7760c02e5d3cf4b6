import { describe, expect, it } from "vitest";
import type { ServerMsg, WorldInfo } from "../src/protocol";
import { initialState, onDisconnect, onServerMessage, setInputs } from "../src/state";

const world: WorldInfo = {
  chunks: [
    [0, 0],
    [1, 0],
  ],
  stride_m: 25.6,
  chunk_extent_m: 51.2,
  base_origin: [-25.6, -25.6, -25.6],
  ego: { position: [0, 0, 1.6], heading: 0 },
};

function frame(tick: number, x: number): ServerMsg {
  return {
    type: "frame",
    session: "s1",
    tick,
    time: tick * 0.1,
    pose: { position: [x, 0, 1.6], heading: 0 },
    speed: 5,
  };
}

describe("viewer state", () => {
  it("accepts a matching welcome", () => {
    const s = onServerMessage(initialState(), {
      type: "welcome",
      version: 1,
      tick_rate: 10,
      world,
    });
    expect(s.connection).toBe("connected");
    expect(s.world).toEqual(world);
  });

  it("flags a version mismatch as an explicit error", () => {
    const s = onServerMessage(initialState(), {
      type: "welcome",
      version: 2,
      tick_rate: 10,
      world,
    });
    expect(s.connection).toBe("error");
    expect(s.error).toMatch(/version mismatch/);
  });

  it("tracks session creation and frames", () => {
    let s = onServerMessage(initialState(), {
      type: "session_created",
      session: "s1",
      pose: { position: [0, 0, 1.6], heading: 0 },
      tick: 0,
      time: 0,
    });
    expect(s.sessionId).toBe("s1");
    expect(s.trail).toHaveLength(1);
    s = onServerMessage(s, frame(1, 0.5));
    s = onServerMessage(s, frame(2, 1.0));
    expect(s.tick).toBe(2);
    expect(s.pose?.position[0]).toBe(1.0);
    expect(s.recordedTicks).toBe(2);
    expect(s.trail).toHaveLength(3);
  });

  it("never integrates inputs into the pose locally", () => {
    let s = onServerMessage(initialState(), {
      type: "session_created",
      session: "s1",
      pose: { position: [3, 4, 1.6], heading: 0.2 },
      tick: 0,
      time: 0,
    });
    const before = s.pose;
    s = setInputs(s, 1.0, -0.5);
    expect(s.pose).toEqual(before);
    expect(s.inputs).toEqual({ throttle: 1.0, steer: -0.5 });
  });

  it("keeps the session reference across a disconnect", () => {
    let s = onServerMessage(initialState(), {
      type: "session_created",
      session: "s1",
      pose: { position: [0, 0, 1.6], heading: 0 },
      tick: 0,
      time: 0,
    });
    s = onServerMessage(s, frame(1, 0.5));
    const trailLen = s.trail.length;
    s = onDisconnect(s);
    expect(s.connection).toBe("disconnected");
    expect(s.sessionId).toBe("s1");
    expect(s.trail).toHaveLength(trailLen);
  });

  it("computes latency from echoed seq", () => {
    const sent = new Map<number, number>([[7, 100]]);
    const s = onServerMessage(
      initialState(),
      { ...frame(1, 0.1), seq: 7 } as ServerMsg,
      (seq) => sent.get(seq),
      142,
    );
    expect(s.latencyMs).toBe(42);
  });

  it("surfaces error frames", () => {
    const s = onServerMessage(initialState(), {
      type: "error",
      code: "unknown_session",
      message: "no session 'x'",
    });
    expect(s.error).toBe("unknown_session: no session 'x'");
  });
});
