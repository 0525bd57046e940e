/** Typed client for the survey HTTP API. */

export type Guess = "real" | "fake";

export interface SessionInfo {
  sessionId: string;
  total: number;
}

export interface AnswerAck {
  position: number;
  total: number;
}

export interface FinalReport {
  correct: number;
  incorrect: number;
}

export interface NextImage {
  imageId: string;
  /** data: URL suitable for an <img> src */
  imageUrl: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

function toBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

async function readError(response: Response): Promise<ApiError> {
  let detail = `request failed (${response.status})`;
  try {
    const body = (await response.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the generic message
  }
  return new ApiError(response.status, detail);
}

export class SurveyApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async postJson<T>(path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body ?? {}),
    });
    if (!response.ok) throw await readError(response);
    return (await response.json()) as T;
  }

  async createSession(n?: number): Promise<SessionInfo> {
    const raw = await this.postJson<{ session_id: string; total: number }>(
      "/api/sessions",
      n === undefined ? {} : { n },
    );
    return { sessionId: raw.session_id, total: raw.total };
  }

  /** Idempotent until the current image is answered. */
  async nextImage(sessionId: string): Promise<NextImage> {
    const response = await this.fetchFn(
      `${this.baseUrl}/api/sessions/${sessionId}/next`,
    );
    if (!response.ok) throw await readError(response);
    const imageId = response.headers.get("x-image-id");
    if (!imageId) throw new ApiError(500, "response is missing X-Image-Id");
    const mime = response.headers.get("content-type") ?? "image/png";
    const bytes = new Uint8Array(await response.arrayBuffer());
    return { imageId, imageUrl: `data:${mime};base64,${toBase64(bytes)}` };
  }

  async submitAnswer(
    sessionId: string,
    imageId: string,
    guess: Guess,
  ): Promise<AnswerAck> {
    return this.postJson<AnswerAck>(`/api/sessions/${sessionId}/answers`, {
      image_id: imageId,
      guess,
    });
  }

  async finish(sessionId: string): Promise<FinalReport> {
    return this.postJson<FinalReport>(`/api/sessions/${sessionId}/finish`);
  }
}
