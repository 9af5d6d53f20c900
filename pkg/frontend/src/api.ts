// Typed client for the mos-service HTTP JSON API.
// Every call goes through an injectable fetch so tests can fake the wire
// without patching globals.

export interface ManifestEntry {
  image: string;
  method: string;
  task: string;
}

export interface StudyCreated {
  study: string;
  items: number;
}

export interface SessionOpened {
  session: string;
  total: number;
}

/** Next-item payload. By service contract it never carries method or
 * task fields; the rater stays blind. */
export interface NextItem {
  completed: false;
  item: number;
  image: string;
  total: number;
}

export interface SessionComplete {
  completed: true;
  total: number;
}

export type NextPayload = NextItem | SessionComplete;

export interface RatingAck {
  item: number;
  completed: boolean;
}

export interface ReportRow {
  method: string;
  task: string;
  mean: number;
  ratings: number;
}

export interface StudyReport {
  rows: ReportRow[];
  raters: number;
  removed: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** An HTTP response the service answered but rejected. Network-level
 * failures are NOT wrapped in this; they surface as the underlying
 * fetch rejection so retry logic can tell the two apart. */
export class ServiceError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ServiceError";
    this.status = status;
  }
}

/** 409: the item already holds a score. Under store-and-forward retry
 * this is a delivery confirmation, not a failure. */
export class RatingConflictError extends ServiceError {
  constructor(message: string) {
    super(409, message);
    this.name = "RatingConflictError";
  }
}

/** 400 on a rating submit: the item index is not the session's current
 * item. The server's cursor wins; refetch it. */
export class OutOfOrderError extends ServiceError {
  constructor(message: string) {
    super(400, message);
    this.name = "OutOfOrderError";
  }
}

export interface ClientOptions {
  fetchImpl?: FetchLike;
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText || `HTTP ${response.status}`;
  }
}

function ratingError(status: number, detail: string): ServiceError {
  if (status === 409) return new RatingConflictError(detail);
  if (status === 400) return new OutOfOrderError(detail);
  return new ServiceError(status, detail);
}

export interface ServiceClient {
  readonly baseUrl: string;
  createStudy(
    manifest: ManifestEntry[],
    options?: { probeFraction?: number; seed?: number },
  ): Promise<StudyCreated>;
  openSession(studyId: string, rater: string): Promise<SessionOpened>;
  nextItem(sessionId: string): Promise<NextPayload>;
  submitRating(sessionId: string, item: number, score: number): Promise<RatingAck>;
  report(studyId: string): Promise<StudyReport>;
  /** URL the <img> tag should load for a payload's image reference. */
  imageUrl(image: string): string;
}

export function createClient(baseUrl: string, options: ClientOptions = {}): ServiceClient {
  const base = baseUrl.replace(/\/+$/, "");
  const doFetch: FetchLike =
    options.fetchImpl ?? ((url, init) => globalThis.fetch(url, init));

  async function request<T>(
    method: string,
    path: string,
    body?: unknown,
    mapError: (status: number, detail: string) => ServiceError = (s, d) =>
      new ServiceError(s, d),
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await doFetch(base + path, init);
    if (!response.ok) {
      throw mapError(response.status, await errorDetail(response));
    }
    return (await response.json()) as T;
  }

  return {
    baseUrl: base,

    createStudy(manifest, opts = {}) {
      return request<StudyCreated>("POST", "/studies", {
        manifest,
        probe_fraction: opts.probeFraction ?? 0.1,
        seed: opts.seed ?? 0,
      });
    },

    openSession(studyId, rater) {
      return request<SessionOpened>(
        "POST",
        `/studies/${encodeURIComponent(studyId)}/sessions`,
        { rater },
      );
    },

    nextItem(sessionId) {
      return request<NextPayload>(
        "GET",
        `/sessions/${encodeURIComponent(sessionId)}/next`,
      );
    },

    submitRating(sessionId, item, score) {
      if (!Number.isInteger(score) || score < 1 || score > 5) {
        return Promise.reject(
          new RangeError(`score must be an integer in 1..5, got ${score}`),
        );
      }
      return request<RatingAck>(
        "POST",
        `/sessions/${encodeURIComponent(sessionId)}/ratings`,
        { item, score },
        ratingError,
      );
    },

    report(studyId) {
      return request<StudyReport>(
        "GET",
        `/studies/${encodeURIComponent(studyId)}/report`,
      );
    },

    imageUrl(image) {
      return `${base}/images/${encodeURIComponent(image)}`;
    },
  };
}
