/** DOM rendering. The answering screen shows only the image, a progress
 * counter and the two choice buttons - no per-image feedback of any kind. */

import type { UiSessionState } from "./state.js";

export interface UiHandlers {
  onStart(): void;
  onGuess(guess: "real" | "fake"): void;
  onRestart(): void;
}

export function render(root: HTMLElement, state: UiSessionState, handlers: UiHandlers): void {
  root.textContent = "";
  if (state.phase === "intro") {
    root.appendChild(introScreen(state, handlers));
  } else if (state.phase === "answering") {
    root.appendChild(answerScreen(state, handlers));
  } else {
    root.appendChild(doneScreen(state, handlers));
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function notice(state: UiSessionState): HTMLElement | null {
  if (!state.notice) return null;
  return el("p", { class: "notice", "data-testid": "notice" }, state.notice);
}

function introScreen(state: UiSessionState, handlers: UiHandlers): HTMLElement {
  const section = el("section", { class: "screen intro", "data-testid": "intro" });
  section.appendChild(el("h1", {}, "Real or generated?"));
  section.appendChild(
    el(
      "p",
      {},
      "You will see overhead river images one at a time. For each one, decide " +
        "whether it is a real satellite photo or a generated image. You get " +
        "your score at the end - never during the survey.",
    ),
  );
  const start = el("button", { class: "primary", "data-testid": "start" }, "Start survey");
  start.addEventListener("click", () => handlers.onStart());
  section.appendChild(start);
  const n = notice(state);
  if (n) section.appendChild(n);
  return section;
}

function answerScreen(state: UiSessionState, handlers: UiHandlers): HTMLElement {
  const section = el("section", { class: "screen answering", "data-testid": "answering" });
  section.appendChild(
    el(
      "p",
      { class: "progress", "data-testid": "progress" },
      `Image ${state.position + 1} of ${state.total}`,
    ),
  );
  const frame = el("div", { class: "frame" });
  if (state.imageUrl) {
    frame.appendChild(
      el("img", { src: state.imageUrl, alt: "river image to judge", "data-testid": "image" }),
    );
  } else {
    frame.appendChild(el("p", { class: "loading" }, "Loading image..."));
  }
  section.appendChild(frame);

  const buttons = el("div", { class: "choices" });
  const real = el("button", { class: "choice", "data-testid": "guess-real" }, "Real");
  const fake = el("button", { class: "choice", "data-testid": "guess-fake" }, "Fake");
  if (state.busy || !state.imageId) {
    real.setAttribute("disabled", "");
    fake.setAttribute("disabled", "");
  }
  real.addEventListener("click", () => handlers.onGuess("real"));
  fake.addEventListener("click", () => handlers.onGuess("fake"));
  buttons.appendChild(real);
  buttons.appendChild(fake);
  section.appendChild(buttons);
  section.appendChild(
    el("p", { class: "hint" }, "Keyboard: left arrow = real, right arrow = fake"),
  );
  const n = notice(state);
  if (n) section.appendChild(n);
  return section;
}

function doneScreen(state: UiSessionState, handlers: UiHandlers): HTMLElement {
  const section = el("section", { class: "screen done", "data-testid": "done" });
  section.appendChild(el("h1", {}, "Survey complete"));
  const totals = state.totals ?? { correct: 0, incorrect: 0 };
  section.appendChild(
    el(
      "p",
      { "data-testid": "totals" },
      `You classified ${totals.correct} correctly and ${totals.incorrect} incorrectly.`,
    ),
  );
  section.appendChild(
    el("p", {}, "Individual images are not revealed, so future runs stay unbiased."),
  );
  const again = el("button", { class: "primary", "data-testid": "restart" }, "Take it again");
  again.addEventListener("click", () => handlers.onRestart());
  section.appendChild(again);
  return section;
}
