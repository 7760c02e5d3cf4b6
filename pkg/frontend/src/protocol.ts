// Session-service wire protocol: length-prefixed JSON messages.
// Every message is a u32 little-endian byte count followed by UTF-8 JSON.
// Over WebSocket, each binary frame carries exactly one framed message;
// over raw TCP the prefixes delimit the stream.

export const PROTOCOL_VERSION = 1;

export type Pose = { position: [number, number, number]; heading: number };

export type Preview = {
  width: number;
  height: number;
  semantic_png: string; // base64
  depth_png: string;
};

export type WorldInfo = {
  chunks: [number, number][];
  stride_m: number;
  chunk_extent_m: number;
  base_origin: [number, number, number];
  ego: Pose;
};

export type ClientMsg =
  | { type: "hello"; version: number }
  | { type: "create_session" }
  | {
      type: "control";
      session: string;
      throttle: number;
      steer: number;
      dt: number;
      seq?: number;
      preview?: boolean;
    }
  | { type: "export_trajectory"; session: string }
  | { type: "close_session"; session: string };

export type ServerMsg =
  | { type: "welcome"; version: number; tick_rate: number; world: WorldInfo }
  | { type: "session_created"; session: string; pose: Pose; tick: number; time: number }
  | {
      type: "frame";
      session: string;
      tick: number;
      time: number;
      pose: Pose;
      speed: number;
      seq?: number;
      preview?: Preview;
    }
  | { type: "trajectory"; session: string; filename: string; trajectory_json: string }
  | { type: "session_closed"; session: string }
  | { type: "error"; code: string; message: string };

const encoder = new TextEncoder();
const decoder = new TextDecoder();

export function encodeMessage(msg: ClientMsg | ServerMsg): Uint8Array {
  const body = encoder.encode(JSON.stringify(msg));
  const out = new Uint8Array(4 + body.length);
  new DataView(out.buffer).setUint32(0, body.length, true);
  out.set(body, 4);
  return out;
}

export function decodeFrame(data: Uint8Array): ServerMsg {
  if (data.length < 4) throw new Error("frame too short");
  const size = new DataView(data.buffer, data.byteOffset, 4).getUint32(0, true);
  if (data.length < 4 + size) throw new Error("frame truncated");
  return JSON.parse(decoder.decode(data.subarray(4, 4 + size))) as ServerMsg;
}

/** Incremental parser for the TCP byte stream. */
export class FrameReader {
  private buffer = new Uint8Array(0);

  push(chunk: Uint8Array): ServerMsg[] {
    const joined = new Uint8Array(this.buffer.length + chunk.length);
    joined.set(this.buffer);
    joined.set(chunk, this.buffer.length);
    this.buffer = joined;

    const out: ServerMsg[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const size = new DataView(this.buffer.buffer, this.buffer.byteOffset, 4).getUint32(0, true);
      if (this.buffer.length < 4 + size) break;
      out.push(JSON.parse(decoder.decode(this.buffer.subarray(4, 4 + size))) as ServerMsg);
      this.buffer = this.buffer.slice(4 + size);
    }
    return out;
  }

  get pending(): number {
    return this.buffer.length;
  }
}
