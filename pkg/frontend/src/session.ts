// Drives one rating session to completion: fetch the current item, ask
// for a score, submit, repeat until the service reports done.
//
// Delivery is at-least-once on the wire but exactly-once in effect. A
// submit that dies on the network is retried with the same item index;
// if the first attempt actually landed, the retry draws a conflict,
// which counts as confirmation. The server's cursor is the only notion
// of progress, so a reloaded client resumes wherever the server says.

import {
  NextItem,
  OutOfOrderError,
  RatingConflictError,
  ServiceClient,
  ServiceError,
} from "./api.js";

export interface RatingView {
  /** Zero-based index of the item being shown. */
  item: number;
  /** Image reference to display, resolvable via client.imageUrl(). */
  image: string;
  /** Fraction of the session already rated, in [0, 1]. */
  progress: number;
  /** Score picked for this item, null until the rater chooses. */
  score: number | null;
}

export interface BackoffPolicy {
  baseMs: number;
  factor: number;
  maxAttempts: number;
}

export const DEFAULT_BACKOFF: BackoffPolicy = {
  baseMs: 250,
  factor: 2,
  maxAttempts: 6,
};

export interface RunSessionOptions {
  /** Called once per item; resolves to the rater's score in 1..5. */
  chooseScore: (view: RatingView) => number | Promise<number>;
  /** Called when a new item is shown, before the score is requested. */
  onItem?: (view: RatingView) => void;
  backoff?: BackoffPolicy;
  sleep?: (ms: number) => Promise<void>;
}

export interface CompletedSession {
  session: string;
  total: number;
  /** Ratings this run submitted; lower than total when resuming. */
  submitted: number;
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

/** Retry fn on network failure (a rejected fetch) with exponential
 * backoff. HTTP-level errors are the service speaking and local
 * validation is a bug, not weather; both pass through untouched. */
async function withRetry<T>(
  fn: () => Promise<T>,
  policy: BackoffPolicy,
  sleep: (ms: number) => Promise<void>,
): Promise<T> {
  let delay = policy.baseMs;
  for (let attempt = 1; ; attempt++) {
    try {
      return await fn();
    } catch (error) {
      const isNetwork = !(error instanceof ServiceError || error instanceof RangeError);
      if (!isNetwork || attempt >= policy.maxAttempts) throw error;
      await sleep(delay);
      delay *= policy.factor;
    }
  }
}

function viewOf(next: NextItem): RatingView {
  return {
    item: next.item,
    image: next.image,
    progress: next.total > 0 ? next.item / next.total : 0,
    score: null,
  };
}

export async function runSession(
  client: ServiceClient,
  sessionId: string,
  options: RunSessionOptions,
): Promise<CompletedSession> {
  const backoff = options.backoff ?? DEFAULT_BACKOFF;
  const sleep = options.sleep ?? defaultSleep;
  let submitted = 0;

  for (;;) {
    const next = await withRetry(() => client.nextItem(sessionId), backoff, sleep);
    if (next.completed) {
      return { session: sessionId, total: next.total, submitted };
    }

    const view = viewOf(next);
    options.onItem?.(view);
    const score = await options.chooseScore(view);

    try {
      await withRetry(
        () => client.submitRating(sessionId, next.item, score),
        backoff,
        sleep,
      );
      submitted += 1;
    } catch (error) {
      // Conflict: this exact item already holds a score, so the lost
      // attempt landed. Out-of-order: the cursor moved past us (another
      // tab, a resume). Either way the next fetch re-syncs.
      if (error instanceof RatingConflictError) {
        submitted += 1;
      } else if (!(error instanceof OutOfOrderError)) {
        throw error;
      }
    }
  }
}
