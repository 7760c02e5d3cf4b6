// HUD text bindings: speed, tick, session, latency, recording length, status.

import type { ViewerState } from "./state";

export type HudElements = {
  status: HTMLElement;
  speed: HTMLElement;
  tick: HTMLElement;
  session: HTMLElement;
  latency: HTMLElement;
  recorded: HTMLElement;
  error: HTMLElement;
};

export function renderHud(el: HudElements, s: ViewerState): void {
  el.status.textContent = s.connection;
  el.status.dataset.state = s.connection;
  el.speed.textContent = `${s.speed.toFixed(1)} m/s`;
  el.tick.textContent = `tick ${s.tick} (${s.time.toFixed(1)} s)`;
  el.session.textContent = s.sessionId ?? "-";
  el.latency.textContent = s.latencyMs === null ? "-" : `${s.latencyMs.toFixed(0)} ms`;
  el.recorded.textContent = `${s.recordedTicks + (s.pose ? 1 : 0)} poses`;
  el.error.textContent = s.error ?? "";
}
