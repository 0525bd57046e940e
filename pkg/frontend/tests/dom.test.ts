import { beforeEach, describe, expect, it } from "vitest";

import { SurveyApi } from "../src/api.js";
import { SurveyFlow, type UiSessionState } from "../src/state.js";
import { render, type UiHandlers } from "../src/ui.js";
import { FakeSurveyServer } from "./fake-server.js";

/** words that would leak correctness feedback on the answering screen */
const FEEDBACK_PATTERN = /(correct|incorrect|wrong|right answer|score|well done)/i;

function noopHandlers(): UiHandlers {
  return { onStart: () => {}, onGuess: () => {}, onRestart: () => {} };
}

function wiredSetup() {
  const server = new FakeSurveyServer(25);
  const api = new SurveyApi("http://fake", server.fetch);
  const root = document.createElement("main");
  document.body.appendChild(root);
  const handlers: UiHandlers = {
    onStart: () => void flow.start(),
    onGuess: (guess) => void flow.answer(guess),
    onRestart: () => flow.reset(),
  };
  const flow = new SurveyFlow(api, (state) => render(root, state, handlers));
  render(root, flow.state, handlers);
  return { server, flow, root };
}

describe("render", () => {
  beforeEach(() => {
    document.body.textContent = "";
  });

  it("intro screen offers a start button", () => {
    const { root } = wiredSetup();
    expect(root.querySelector('[data-testid="intro"]')).toBeTruthy();
    expect(root.querySelector('[data-testid="start"]')).toBeTruthy();
  });

  it("answering screen has exactly two choices and no feedback element", async () => {
    const { root, flow } = wiredSetup();
    await flow.start();
    const screen = root.querySelector('[data-testid="answering"]');
    expect(screen).toBeTruthy();
    const buttons = root.querySelectorAll("button.choice");
    expect(buttons.length).toBe(2);
    expect(root.querySelector('[data-testid="progress"]')?.textContent).toContain("1 of 25");
    expect(root.textContent ?? "").not.toMatch(FEEDBACK_PATTERN);
    expect(root.querySelector('[data-testid="image"]')?.getAttribute("src")).toMatch(
      /^data:image\/png;base64,/,
    );
  });

  it("answering screens stay feedback-free through a whole session", async () => {
    const { root, flow } = wiredSetup();
    await flow.start();
    for (let i = 0; i < 25; i++) {
      expect(root.textContent ?? "").not.toMatch(FEEDBACK_PATTERN);
      await flow.answer("real");
    }
    expect(root.querySelector('[data-testid="done"]')).toBeTruthy();
  });

  it("done screen shows only the totals", async () => {
    const { root, flow } = wiredSetup();
    await flow.start();
    for (let i = 0; i < 25; i++) await flow.answer("fake");
    const totals = root.querySelector('[data-testid="totals"]')?.textContent ?? "";
    const match = totals.match(/classified (\d+) correctly and (\d+) incorrectly/);
    expect(match).toBeTruthy();
    expect(Number(match?.[1]) + Number(match?.[2])).toBe(25);
    // no per-image information anywhere on the final screen
    expect(root.querySelectorAll("img").length).toBe(0);
  });

  it("buttons disable while a submission is in flight", async () => {
    const { root, flow } = wiredSetup();
    await flow.start();
    const submission = flow.answer("real");
    const disabled = root.querySelectorAll("button.choice[disabled]");
    expect(disabled.length).toBe(2);
    await submission;
  });

  it("clicking a choice advances the progress counter", async () => {
    const { root, flow } = wiredSetup();
    await flow.start();
    (root.querySelector('[data-testid="guess-real"]') as HTMLButtonElement).click();
    await new Promise((resolve) => setTimeout(resolve, 20));
    expect(flow.state.position).toBe(1);
    expect(root.querySelector('[data-testid="progress"]')?.textContent).toContain("2 of 25");
  });

  it("a notice renders when the flow reports one", () => {
    const root = document.createElement("div");
    const state: UiSessionState = {
      phase: "intro",
      sessionId: null,
      position: 0,
      total: 0,
      imageId: null,
      imageUrl: null,
      totals: null,
      notice: "Network problem: fetch failed - try again.",
      busy: false,
    };
    render(root, state, noopHandlers());
    expect(root.querySelector('[data-testid="notice"]')?.textContent).toContain(
      "Network problem",
    );
  });
});

describe("keyboard shortcuts via mount", () => {
  it("left/right arrows submit exactly one answer each", async () => {
    document.body.textContent = "";
    const server = new FakeSurveyServer(25);
    const { mount } = await import("../src/main.js");
    const realFetch = globalThis.fetch;
    globalThis.fetch = server.fetch as typeof fetch;
    try {
      const root = document.createElement("main");
      document.body.appendChild(root);
      window.sessionStorage.clear();
      const flow = mount(root);
      await flow.start();
      expect(flow.state.position).toBe(0);

      window.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowLeft" }));
      // a second press in the same tick is swallowed by the busy guard
      window.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowRight" }));
      await new Promise((resolve) => setTimeout(resolve, 30));
      expect(flow.state.position).toBe(1);

      window.dispatchEvent(new KeyboardEvent("keydown", { key: "ArrowRight" }));
      await new Promise((resolve) => setTimeout(resolve, 30));
      expect(flow.state.position).toBe(2);
    } finally {
      globalThis.fetch = realFetch;
    }
  });
});
