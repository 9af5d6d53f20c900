import { describe, expect, it } from "vitest";

import {
  createClient,
  OutOfOrderError,
  RatingConflictError,
  ServiceError,
} from "../src/api";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function recordingFetch(responses: Response[]) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const impl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    const next = responses.shift();
    if (!next) throw new Error("no canned response left");
    return next;
  };
  return { calls, impl };
}

describe("createClient", () => {
  it("strips trailing slashes and encodes path ids", async () => {
    const { calls, impl } = recordingFetch([
      jsonResponse(200, { completed: true, total: 3 }),
    ]);
    const client = createClient("http://host:9000///", { fetchImpl: impl });
    await client.nextItem("session id/7");
    expect(calls[0]?.url).toBe("http://host:9000/sessions/session%20id%2F7/next");
  });

  it("posts study manifests with defaulted probe fraction and seed", async () => {
    const { calls, impl } = recordingFetch([jsonResponse(200, { study: "s", items: 11 })]);
    const client = createClient("http://host", { fetchImpl: impl });
    const created = await client.createStudy([
      { image: "a.png", method: "m", task: "t" },
    ]);
    expect(created).toEqual({ study: "s", items: 11 });
    const body = JSON.parse(String(calls[0]?.init?.body));
    expect(body).toEqual({
      manifest: [{ image: "a.png", method: "m", task: "t" }],
      probe_fraction: 0.1,
      seed: 0,
    });
    expect(calls[0]?.init?.headers).toMatchObject({ "content-type": "application/json" });
  });

  it("rejects out-of-range scores before touching the wire", async () => {
    const { calls, impl } = recordingFetch([]);
    const client = createClient("http://host", { fetchImpl: impl });
    for (const bad of [0, 6, 3.5, NaN]) {
      await expect(client.submitRating("s", 0, bad)).rejects.toBeInstanceOf(RangeError);
    }
    expect(calls).toHaveLength(0);
  });

  it("maps rating status codes to typed errors", async () => {
    const { impl } = recordingFetch([
      jsonResponse(409, { detail: "item 2 already rated" }),
      jsonResponse(400, { detail: "out of order: current item is 1" }),
      jsonResponse(422, { detail: "score must be in 1..5" }),
    ]);
    const client = createClient("http://host", { fetchImpl: impl });

    const conflict = await client.submitRating("s", 2, 4).catch((e) => e);
    expect(conflict).toBeInstanceOf(RatingConflictError);
    expect(conflict).toBeInstanceOf(ServiceError);
    expect(conflict.status).toBe(409);
    expect(conflict.message).toContain("already rated");

    const stale = await client.submitRating("s", 2, 4).catch((e) => e);
    expect(stale).toBeInstanceOf(OutOfOrderError);
    expect(stale.status).toBe(400);

    const range = await client.submitRating("s", 2, 4).catch((e) => e);
    expect(range).toBeInstanceOf(ServiceError);
    expect(range).not.toBeInstanceOf(RatingConflictError);
    expect(range.status).toBe(422);
  });

  it("keeps non-rating HTTP failures as plain service errors", async () => {
    const { impl } = recordingFetch([
      new Response("gone fishing", { status: 503, statusText: "Service Unavailable" }),
    ]);
    const client = createClient("http://host", { fetchImpl: impl });
    const error = await client.nextItem("s").catch((e) => e);
    expect(error).toBeInstanceOf(ServiceError);
    expect(error.status).toBe(503);
    expect(error.message).toBe("Service Unavailable");
  });

  it("builds image urls under the service base", () => {
    const client = createClient("http://host:8000/", { fetchImpl: async () => jsonResponse(200, {}) });
    expect(client.imageUrl("pair 0001.png")).toBe(
      "http://host:8000/images/pair%200001.png",
    );
  });
});
