import { SessionClient, downloadTrajectory } from "./client";
import { HudElements, renderHud } from "./hud";
import { InputController } from "./input";
import { drawMinimap } from "./minimap";
import { drawPreview } from "./preview";
import { Store, onConnecting, onDisconnect, onServerMessage, setInputs } from "./state";

const PREVIEW_EVERY = 3; // request a preview on every Nth control tick

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const store = new Store();
const input = new InputController();
input.attachKeyboard(window);
input.attachJoystick(byId("joystick"));

const hud: HudElements = {
  status: byId("status"),
  speed: byId("speed"),
  tick: byId("tick"),
  session: byId("session"),
  latency: byId("latency"),
  recorded: byId("recorded"),
  error: byId("error"),
};
const semanticCanvas = byId<HTMLCanvasElement>("semantic");
const depthCanvas = byId<HTMLCanvasElement>("depth");
const minimapCanvas = byId<HTMLCanvasElement>("minimap");

const client = new SessionClient({
  onOpen: () => {
    // re-attach to an existing session after a reconnect, else create one
    if (!store.get().sessionId) client.createSession();
  },
  onClose: () => store.update(onDisconnect),
  onMessage: (msg) =>
    store.update((s) => onServerMessage(s, msg, (seq) => client.sentAt(seq), performance.now())),
});

store.subscribe((s) => {
  renderHud(hud, s);
  if (s.world) drawMinimap(minimapCanvas.getContext("2d")!, s.world, s.trail, s.pose);
  if (s.preview) drawPreview(semanticCanvas, depthCanvas, s.preview);
  byId("reconnect").style.display = s.connection === "disconnected" && s.sessionId ? "" : "none";
});

let lastTick = performance.now();
let tickCount = 0;
setInterval(() => {
  const s = store.get();
  if (!client.connected || !s.sessionId) return;
  const { throttle, steer } = input.current();
  store.update((st) => setInputs(st, throttle, steer));
  const now = performance.now();
  const dt = Math.min(Math.max((now - lastTick) / 1000, 0.001), 1.0);
  lastTick = now;
  tickCount += 1;
  client.control(s.sessionId, throttle, steer, dt, tickCount % PREVIEW_EVERY === 0);
}, 100);

byId("connect").addEventListener("click", () => {
  lastTick = performance.now();
  store.update(onConnecting);
  client.connect(byId<HTMLInputElement>("address").value);
});

byId("reconnect").addEventListener("click", () => {
  store.update(onConnecting);
  client.connect(byId<HTMLInputElement>("address").value);
});

byId("export").addEventListener("click", async () => {
  const s = store.get();
  if (!s.sessionId) return;
  const msg = await client.exportTrajectory(s.sessionId);
  downloadTrajectory(msg.filename, msg.trajectory_json);
});
