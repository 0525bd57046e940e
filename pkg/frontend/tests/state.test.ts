import { beforeEach, describe, expect, it } from "vitest";

import { SurveyApi } from "../src/api.js";
import { SurveyFlow, type SessionStore, type UiSessionState } from "../src/state.js";
import { FakeSurveyServer } from "./fake-server.js";

function memoryStore(): SessionStore {
  let value: string | null = null;
  return {
    load: () => value,
    save: (id) => {
      value = id;
    },
    clear: () => {
      value = null;
    },
  };
}

function setup(n = 25) {
  const server = new FakeSurveyServer(n);
  const api = new SurveyApi("http://fake", server.fetch);
  const states: UiSessionState[] = [];
  const store = memoryStore();
  const flow = new SurveyFlow(api, (s) => states.push(s), store);
  return { server, api, flow, states, store };
}

describe("SurveyFlow", () => {
  let ctx: ReturnType<typeof setup>;

  beforeEach(() => {
    ctx = setup();
  });

  it("walks a full 25-image session to the done phase", async () => {
    const { flow } = ctx;
    await flow.start();
    expect(flow.state.phase).toBe("answering");
    expect(flow.state.total).toBe(25);
    for (let i = 0; i < 25; i++) {
      expect(flow.state.imageId).toBeTruthy();
      await flow.answer(i % 3 === 0 ? "real" : "fake");
    }
    expect(flow.state.phase).toBe("done");
    const totals = flow.state.totals;
    expect(totals).not.toBeNull();
    expect((totals?.correct ?? 0) + (totals?.incorrect ?? 0)).toBe(25);
  });

  it("never exposes label data before finish", async () => {
    const { flow, server } = ctx;
    await flow.start();
    for (let i = 0; i < 25; i++) await flow.answer("real");
    const preFinish = server.responses.filter((r) => !r.url.endsWith("/finish"));
    for (const response of preFinish) {
      const text = JSON.stringify(response.body ?? "");
      expect(text).not.toMatch(/label|truth|correct/i);
    }
  });

  it("progress counts answered images", async () => {
    const { flow } = ctx;
    await flow.start();
    expect(flow.state.position).toBe(0);
    await flow.answer("fake");
    expect(flow.state.position).toBe(1);
  });

  it("recovers from a duplicate answer with a friendly notice", async () => {
    const { flow, api } = ctx;
    await flow.start();
    const staleImage = flow.state.imageId as string;
    await flow.answer("real");
    // simulate a stale double-submit (e.g. the browser back button)
    const sessionId = flow.state.sessionId as string;
    await api.submitAnswer(sessionId, staleImage, "real").catch(() => undefined);
    flow.state = { ...flow.state, imageId: staleImage };
    await flow.answer("fake");
    expect(flow.state.notice).toMatch(/already answered/i);
    expect(flow.state.phase).toBe("answering");
    expect(flow.state.imageId).not.toBe(staleImage);
  });

  it("keeps session state on network failure and allows retry", async () => {
    const { flow, server } = ctx;
    server.failOnce();
    await flow.start();
    expect(flow.state.phase).toBe("intro");
    expect(flow.state.notice).toMatch(/network/i);
    await flow.start();
    expect(flow.state.phase).toBe("answering");
  });

  it("resumes at the current cursor after a refresh", async () => {
    const { flow, api, store } = ctx;
    await flow.start();
    await flow.answer("real");
    const sessionId = flow.state.sessionId as string;
    const imageBefore = flow.state.imageId;

    // a fresh flow sharing the same persistent store = page reload
    const states: UiSessionState[] = [];
    const reloaded = new SurveyFlow(api, (s) => states.push(s), store);
    expect(await reloaded.resume()).toBe(true);
    expect(reloaded.state.sessionId).toBe(sessionId);
    expect(reloaded.state.imageId).toBe(imageBefore);
  });

  it("busy flag blocks concurrent double submission", async () => {
    const { flow } = ctx;
    await flow.start();
    const first = flow.answer("real");
    const second = flow.answer("fake"); // rejected synchronously by the guard
    await Promise.all([first, second]);
    expect(flow.state.position).toBe(1);
  });

  it("reset returns to the intro phase", async () => {
    const { flow } = ctx;
    await flow.start();
    flow.reset();
    expect(flow.state.phase).toBe("intro");
    expect(flow.state.sessionId).toBeNull();
  });
});
