// WebSocket session client. The server owns all poses; this side only sends
// control messages at the tick rate and reflects what comes back.

import {
  ClientMsg,
  PROTOCOL_VERSION,
  ServerMsg,
  decodeFrame,
  encodeMessage,
} from "./protocol";

export type ClientEvents = {
  onMessage: (msg: ServerMsg) => void;
  onOpen: () => void;
  onClose: () => void;
};

export class SessionClient {
  private ws: WebSocket | null = null;
  private seq = 0;
  private sendTimes = new Map<number, number>();
  private pendingExport: ((msg: Extract<ServerMsg, { type: "trajectory" }>) => void) | null = null;

  constructor(private events: ClientEvents) {}

  connect(address: string): void {
    const url = address.startsWith("ws") ? address : `ws://${address}`;
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    this.ws = ws;
    ws.onopen = () => {
      this.send({ type: "hello", version: PROTOCOL_VERSION });
      this.events.onOpen();
    };
    ws.onmessage = (ev) => {
      const msg = decodeFrame(new Uint8Array(ev.data as ArrayBuffer));
      if (msg.type === "trajectory" && this.pendingExport) {
        const resolve = this.pendingExport;
        this.pendingExport = null;
        resolve(msg);
      }
      this.events.onMessage(msg);
    };
    ws.onclose = () => {
      this.ws = null;
      this.events.onClose();
    };
    ws.onerror = () => ws.close();
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  send(msg: ClientMsg): void {
    if (!this.connected) return;
    this.ws!.send(encodeMessage(msg));
  }

  createSession(): void {
    this.send({ type: "create_session" });
  }

  /** One tick of input; returns the seq used, for latency bookkeeping. */
  control(session: string, throttle: number, steer: number, dt: number, preview: boolean): number {
    const seq = ++this.seq;
    this.sendTimes.set(seq, performance.now());
    if (this.sendTimes.size > 256) {
      const oldest = this.sendTimes.keys().next().value as number;
      this.sendTimes.delete(oldest);
    }
    this.send({ type: "control", session, throttle, steer, dt, seq, preview });
    return seq;
  }

  sentAt(seq: number): number | undefined {
    const t = this.sendTimes.get(seq);
    this.sendTimes.delete(seq);
    return t;
  }

  exportTrajectory(session: string): Promise<Extract<ServerMsg, { type: "trajectory" }>> {
    return new Promise((resolve) => {
      this.pendingExport = resolve;
      this.send({ type: "export_trajectory", session });
    });
  }

  close(): void {
    this.ws?.close();
  }
}

/** Trigger a browser download of the exported trajectory, byte-for-byte as
 * the server serialized it. */
export function downloadTrajectory(filename: string, trajectoryJson: string): void {
  const blob = new Blob([trajectoryJson], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = filename;
  a.click();
  URL.revokeObjectURL(a.href);
}
