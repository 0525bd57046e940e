/** Session state machine; the server stays the source of truth. */

import { ApiError, type FinalReport, type Guess, type SurveyApi } from "./api.js";

export type Phase = "intro" | "answering" | "done";

export interface UiSessionState {
  phase: Phase;
  sessionId: string | null;
  /** answered so far */
  position: number;
  total: number;
  imageId: string | null;
  imageUrl: string | null;
  totals: FinalReport | null;
  /** transient, user-facing message (network retry, duplicate answer) */
  notice: string | null;
  busy: boolean;
}

const INITIAL: UiSessionState = {
  phase: "intro",
  sessionId: null,
  position: 0,
  total: 0,
  imageId: null,
  imageUrl: null,
  totals: null,
  notice: null,
  busy: false,
};

export interface SessionStore {
  load(): string | null;
  save(sessionId: string): void;
  clear(): void;
}

/** sessionStorage-backed persistence so a refresh resumes mid-session. */
export function browserSessionStore(storage: Storage): SessionStore {
  const KEY = "river-survey-session";
  return {
    load: () => storage.getItem(KEY),
    save: (sessionId) => storage.setItem(KEY, sessionId),
    clear: () => storage.removeItem(KEY),
  };
}

export class SurveyFlow {
  state: UiSessionState = { ...INITIAL };

  constructor(
    private readonly api: SurveyApi,
    private readonly onChange: (state: UiSessionState) => void,
    private readonly store?: SessionStore,
  ) {}

  private update(patch: Partial<UiSessionState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.state);
  }

  /** Begin a fresh session (intro -> answering). */
  async start(n?: number): Promise<void> {
    if (this.state.busy) return;
    this.update({ busy: true, notice: null });
    try {
      const info = await this.api.createSession(n);
      this.store?.save(info.sessionId);
      this.update({
        phase: "answering",
        sessionId: info.sessionId,
        total: info.total,
        position: 0,
        totals: null,
      });
      await this.loadCurrentImage();
    } catch (err) {
      this.update({ notice: describe(err), phase: "intro" });
    } finally {
      this.update({ busy: false });
    }
  }

  /** Re-attach to a stored session after a refresh. */
  async resume(): Promise<boolean> {
    const sessionId = this.store?.load();
    if (!sessionId) return false;
    this.update({ busy: true, sessionId, phase: "answering" });
    try {
      await this.loadCurrentImage();
      return true;
    } catch (err) {
      // the stored session is finished or gone; start over
      this.store?.clear();
      this.update({ ...INITIAL, notice: describe(err) });
      return false;
    } finally {
      this.update({ busy: false });
    }
  }

  private async loadCurrentImage(): Promise<void> {
    const sessionId = this.state.sessionId;
    if (!sessionId) throw new Error("no active session");
    const next = await this.api.nextImage(sessionId);
    this.update({ imageId: next.imageId, imageUrl: next.imageUrl });
  }

  /** Submit exactly one answer for the image on screen. */
  async answer(guess: Guess): Promise<void> {
    const { sessionId, imageId, busy, phase } = this.state;
    if (busy || phase !== "answering" || !sessionId || !imageId) return;
    this.update({ busy: true, notice: null });
    try {
      const ack = await this.api.submitAnswer(sessionId, imageId, guess);
      this.update({ position: ack.position, imageId: null, imageUrl: null });
      if (ack.position >= ack.total) {
        const totals = await this.api.finish(sessionId);
        this.store?.clear();
        this.update({ phase: "done", totals });
      } else {
        await this.loadCurrentImage();
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // duplicate or out-of-order: re-sync with the server's cursor
        this.update({ notice: "That image was already answered - here is the next one." });
        try {
          await this.loadCurrentImage();
        } catch {
          this.update({ notice: "Session is complete." });
        }
      } else {
        this.update({ notice: `${describe(err)} - your progress is saved; try again.` });
      }
    } finally {
      this.update({ busy: false });
    }
  }

  reset(): void {
    this.store?.clear();
    this.update({ ...INITIAL });
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return `Network problem: ${err.message}`;
  return "Unexpected error";
}
