import { SurveyApi } from "./api.js";
import { browserSessionStore, SurveyFlow, type UiSessionState } from "./state.js";
import { render, type UiHandlers } from "./ui.js";

export function mount(root: HTMLElement, baseUrl = ""): SurveyFlow {
  const api = new SurveyApi(baseUrl);
  const store = browserSessionStore(window.sessionStorage);

  const handlers: UiHandlers = {
    onStart: () => void flow.start(),
    onGuess: (guess) => void flow.answer(guess),
    onRestart: () => {
      flow.reset();
      void flow.start();
    },
  };

  const flow = new SurveyFlow(
    api,
    (state: UiSessionState) => render(root, state, handlers),
    store,
  );

  window.addEventListener("keydown", (event) => {
    if (flow.state.phase !== "answering") return;
    if (event.key === "ArrowLeft") void flow.answer("real");
    if (event.key === "ArrowRight") void flow.answer("fake");
  });

  render(root, flow.state, handlers);
  void flow.resume();
  return flow;
}

declare global {
  interface Window {
    __SURVEY_API_BASE__?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mount(document.getElementById("app") as HTMLElement, window.__SURVEY_API_BASE__ ?? "");
}
