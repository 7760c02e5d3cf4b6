// The single viewer-state store. Poses shown in the UI come only from server
// frames; inputs are sent upstream and never integrated locally.

import type { Pose, Preview, ServerMsg, WorldInfo } from "./protocol";
import { PROTOCOL_VERSION } from "./protocol";

export type Connection = "disconnected" | "connecting" | "connected" | "error";

export type ViewerState = {
  connection: Connection;
  error: string | null;
  world: WorldInfo | null;
  tickRate: number;
  sessionId: string | null;
  pose: Pose | null;
  speed: number;
  tick: number;
  time: number;
  recordedTicks: number;
  trail: [number, number][];
  inputs: { throttle: number; steer: number };
  preview: Preview | null;
  latencyMs: number | null;
  recording: boolean;
};

export function initialState(): ViewerState {
  return {
    connection: "disconnected",
    error: null,
    world: null,
    tickRate: 10,
    sessionId: null,
    pose: null,
    speed: 0,
    tick: 0,
    time: 0,
    recordedTicks: 0,
    trail: [],
    inputs: { throttle: 0, steer: 0 },
    preview: null,
    latencyMs: null,
    recording: true,
  };
}

export function onConnecting(s: ViewerState): ViewerState {
  return { ...s, connection: "connecting", error: null };
}

export function onDisconnect(s: ViewerState): ViewerState {
  // keep sessionId and trail: the recording lives on the server and the
  // session can be re-attached after reconnecting
  return { ...s, connection: "disconnected" };
}

export function setInputs(s: ViewerState, throttle: number, steer: number): ViewerState {
  return { ...s, inputs: { throttle, steer } };
}

export function onServerMessage(
  s: ViewerState,
  msg: ServerMsg,
  sentAt?: (seq: number) => number | undefined,
  now?: number,
): ViewerState {
  switch (msg.type) {
    case "welcome": {
      if (msg.version !== PROTOCOL_VERSION) {
        return {
          ...s,
          connection: "error",
          error: `protocol version mismatch: server ${msg.version}, viewer ${PROTOCOL_VERSION}`,
        };
      }
      return { ...s, connection: "connected", world: msg.world, tickRate: msg.tick_rate };
    }
    case "session_created":
      return {
        ...s,
        sessionId: msg.session,
        pose: msg.pose,
        tick: msg.tick,
        time: msg.time,
        recordedTicks: 0,
        trail: [[msg.pose.position[0], msg.pose.position[1]]],
      };
    case "frame": {
      let latencyMs = s.latencyMs;
      if (msg.seq !== undefined && sentAt && now !== undefined) {
        const t0 = sentAt(msg.seq);
        if (t0 !== undefined) latencyMs = now - t0;
      }
      return {
        ...s,
        pose: msg.pose,
        speed: msg.speed,
        tick: msg.tick,
        time: msg.time,
        recordedTicks: msg.tick,
        trail: [...s.trail, [msg.pose.position[0], msg.pose.position[1]]],
        preview: msg.preview ?? s.preview,
        latencyMs,
      };
    }
    case "session_closed":
      return { ...s, sessionId: null };
    case "error":
      return { ...s, error: `${msg.code}: ${msg.message}` };
    default:
      return s;
  }
}

export type Listener = (s: ViewerState) => void;

export class Store {
  private state = initialState();
  private listeners: Listener[] = [];

  get(): ViewerState {
    return this.state;
  }

  update(fn: (s: ViewerState) => ViewerState): void {
    this.state = fn(this.state);
    for (const l of this.listeners) l(this.state);
  }

  subscribe(l: Listener): void {
    this.listeners.push(l);
  }
}
