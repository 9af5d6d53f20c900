import { describe, expect, it } from "vitest";

import { createClient } from "../src/api";
import { BackoffPolicy, runSession } from "../src/session";
import { MockItem, MockService } from "./mockService";

const FAST: BackoffPolicy = { baseMs: 5, factor: 3, maxAttempts: 4 };

function plainItems(n: number): MockItem[] {
  return Array.from({ length: n }, (_, i) => ({
    image: `img_${i}.png`,
    method: "m",
    task: "t",
  }));
}

function harness(items: MockItem[]) {
  const mock = new MockService(items);
  const client = createClient("http://mock", { fetchImpl: mock.fetch });
  const slept: number[] = [];
  const sleep = async (ms: number) => {
    slept.push(ms);
  };
  return { mock, client, slept, sleep };
}

describe("runSession", () => {
  it("rates every item in order and reports completion", async () => {
    const { mock, client, sleep } = harness(plainItems(5));
    const shown: number[] = [];

    const done = await runSession(client, mock.sessionId, {
      chooseScore: () => 3,
      onItem: (view) => shown.push(view.item),
      backoff: FAST,
      sleep,
    });

    expect(done).toEqual({ session: "sess-1", total: 5, submitted: 5 });
    expect(mock.ratings).toEqual([3, 3, 3, 3, 3]);
    expect(shown).toEqual([0, 1, 2, 3, 4]);
    expect(mock.report().rows).toEqual([
      { method: "m", task: "t", mean: 3, ratings: 5 },
    ]);
  });

  it("reports progress fractions from the server's own counters", async () => {
    const { mock, client, sleep } = harness(plainItems(4));
    const fractions: number[] = [];
    await runSession(client, mock.sessionId, {
      chooseScore: (view) => {
        fractions.push(view.progress);
        return 5;
      },
      backoff: FAST,
      sleep,
    });
    expect(fractions).toEqual([0, 0.25, 0.5, 0.75]);
  });

  it("resumes at the server's current item after a reload", async () => {
    const { mock, client, sleep } = harness(plainItems(6));
    mock.advance(2);
    mock.advance(4);

    const shown: number[] = [];
    const done = await runSession(client, mock.sessionId, {
      chooseScore: () => 1,
      onItem: (view) => shown.push(view.item),
      backoff: FAST,
      sleep,
    });

    expect(shown).toEqual([2, 3, 4, 5]);
    expect(done.submitted).toBe(4);
    expect(mock.ratings).toEqual([2, 4, 1, 1, 1, 1]);
  });

  it("retries a submit the server never saw, recording the score once", async () => {
    const { mock, client, slept, sleep } = harness(plainItems(3));
    mock.dropRequestOnce((m, p) => m === "POST" && p.endsWith("/ratings"));

    await runSession(client, mock.sessionId, { chooseScore: () => 2, backoff: FAST, sleep });

    expect(mock.ratings).toEqual([2, 2, 2]);
    expect(slept).toEqual([FAST.baseMs]);
    const posts = mock.wire.filter((e) => e.method === "POST");
    expect(posts.map((e) => e.status)).toEqual(["dropped-request", 200, 200, 200]);
  });

  it("treats a conflict after a lost acknowledgement as delivery", async () => {
    const { mock, client, sleep } = harness(plainItems(3));
    // The score lands server-side, the 200 dies on the way back.
    mock.dropResponseOnce((m, p) => m === "POST" && p.endsWith("/ratings"));

    const done = await runSession(client, mock.sessionId, {
      chooseScore: () => 4,
      backoff: FAST,
      sleep,
    });

    expect(done.submitted).toBe(3);
    expect(mock.ratings).toEqual([4, 4, 4]);
    const posts = mock.wire.filter((e) => e.method === "POST");
    // One lost ack, one retry answered 409, then the rest clean.
    expect(posts.map((e) => e.status)).toEqual(["dropped-response", 409, 200, 200]);
  });

  it("backs off exponentially while the next-item fetch is down", async () => {
    const { mock, client, slept, sleep } = harness(plainItems(1));
    mock.dropRequestOnce((m, p) => m === "GET" && p.endsWith("/next"));
    mock.dropRequestOnce((m, p) => m === "GET" && p.endsWith("/next"));

    await runSession(client, mock.sessionId, { chooseScore: () => 1, backoff: FAST, sleep });

    expect(slept).toEqual([FAST.baseMs, FAST.baseMs * FAST.factor]);
    expect(mock.ratings).toEqual([1]);
  });

  it("gives up after the retry budget and surfaces the network error", async () => {
    const { mock, client, slept, sleep } = harness(plainItems(1));
    for (let i = 0; i < 10; i++) {
      mock.dropRequestOnce((m, p) => m === "GET" && p.endsWith("/next"));
    }

    await expect(
      runSession(client, mock.sessionId, { chooseScore: () => 1, backoff: FAST, sleep }),
    ).rejects.toThrow(/fetch failed/);
    expect(slept).toHaveLength(FAST.maxAttempts - 1);
  });

  it("refuses out-of-range scores locally without a wire request", async () => {
    const { mock, client, sleep } = harness(plainItems(2));

    await expect(
      runSession(client, mock.sessionId, { chooseScore: () => 9, backoff: FAST, sleep }),
    ).rejects.toThrow(RangeError);
    expect(mock.ratings).toEqual([]);
    expect(mock.wire.filter((e) => e.method === "POST")).toHaveLength(0);
  });

  it("resyncs when another tab rated the shown item first", async () => {
    const { mock, client, sleep } = harness(plainItems(3));
    let raced = false;
    const done = await runSession(client, mock.sessionId, {
      chooseScore: (view) => {
        if (view.item === 1 && !raced) {
          raced = true;
          mock.advance(5); // the other tab wins the race for item 1
        }
        return 2;
      },
      backoff: FAST,
      sleep,
    });

    expect(mock.ratings).toEqual([2, 5, 2]);
    expect(done.total).toBe(3);
    const posts = mock.wire.filter((e) => e.method === "POST");
    expect(posts.map((e) => e.status)).toEqual([200, 409, 200]);
  });
});
