// Keyboard (WASD / arrows, space = brake) plus a pointer-driven virtual
// joystick fallback. Produces a continuous (throttle, steer) pair in [-1, 1].

export type InputState = { throttle: number; steer: number };

export class InputController {
  private keys = new Set<string>();
  private joystick: InputState | null = null;

  attachKeyboard(target: Window): void {
    target.addEventListener("keydown", (e) => {
      this.keys.add((e as KeyboardEvent).key.toLowerCase());
    });
    target.addEventListener("keyup", (e) => {
      this.keys.delete((e as KeyboardEvent).key.toLowerCase());
    });
  }

  attachJoystick(el: HTMLElement): void {
    const rect = () => el.getBoundingClientRect();
    const set = (ev: PointerEvent) => {
      const r = rect();
      const x = ((ev.clientX - r.left) / r.width) * 2 - 1;
      const y = ((ev.clientY - r.top) / r.height) * 2 - 1;
      this.joystick = {
        steer: Math.max(-1, Math.min(1, x)),
        throttle: Math.max(-1, Math.min(1, -y)),
      };
    };
    el.addEventListener("pointerdown", (ev) => {
      el.setPointerCapture(ev.pointerId);
      set(ev);
    });
    el.addEventListener("pointermove", (ev) => {
      if (this.joystick) set(ev);
    });
    const release = () => {
      this.joystick = null;
    };
    el.addEventListener("pointerup", release);
    el.addEventListener("pointercancel", release);
  }

  current(): InputState {
    if (this.joystick) return this.joystick;
    let throttle = 0;
    let steer = 0;
    if (this.keys.has("w") || this.keys.has("arrowup")) throttle += 1;
    if (this.keys.has("s") || this.keys.has("arrowdown")) throttle -= 1;
    if (this.keys.has("a") || this.keys.has("arrowleft")) steer -= 1;
    if (this.keys.has("d") || this.keys.has("arrowright")) steer += 1;
    if (this.keys.has(" ")) throttle = 0;
    return { throttle, steer };
  }
}
