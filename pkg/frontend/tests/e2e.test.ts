// Full-stack check against the real rating service: spawn it, create a
// ten-item study, complete a scripted browser session through the DOM
// panel, then verify the aggregated report against a hand-computed
// mean and scan everything the client saw for method labels.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { JSDOM } from "jsdom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { createClient, FetchLike, NextPayload } from "../src/api";
import { runSession } from "../src/session";
import { createRatingPanel } from "../src/view";

// 1x1 PNG so the static image route has real bytes to serve.
const TINY_PNG = Buffer.from(
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mP8z8BQDwAEhQGAhKmMIQAAAABJRU5ErkJggg==",
  "base64",
);

const METHODS = ["secret-method-ours", "secret-method-base", "secret-method-ablate"];
const TASK = "secret-task-facades";
const IMAGES = Array.from({ length: 9 }, (_, i) => `img_${i}.png`);

/** One score per image, by name, so the probe repeat agrees with its
 * first showing and the rater passes the consistency filter. */
function scoreFor(image: string): number {
  const digits = image.match(/\d+/);
  return (Number(digits?.[0] ?? 0) % 5) + 1;
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      const port = typeof address === "object" && address ? address.port : 0;
      probe.close(() => resolve(port));
    });
  });
}

describe("live service end to end", () => {
  let proc: ChildProcess | undefined;
  let base = "";

  beforeAll(async () => {
    const store = mkdtempSync(join(tmpdir(), "mos-store-"));
    const imagesDir = mkdtempSync(join(tmpdir(), "mos-images-"));
    for (const name of IMAGES) {
      writeFileSync(join(imagesDir, name), TINY_PNG);
    }

    const port = await freePort();
    base = `http://127.0.0.1:${port}`;
    proc = spawn(
      "python3",
      [
        "-m", "cycleiq.cli", "mos-serve",
        "--store", store,
        "--images", imagesDir,
        "--port", String(port),
      ],
      { stdio: ["ignore", "pipe", "pipe"], env: { ...process.env, PYTHONUNBUFFERED: "1" } },
    );
    const stderr: string[] = [];
    proc.stderr?.on("data", (chunk) => stderr.push(String(chunk)));

    const deadline = Date.now() + 110_000;
    for (;;) {
      if (proc.exitCode !== null) {
        throw new Error(`service exited early:\n${stderr.join("")}`);
      }
      try {
        await fetch(`${base}/studies/none/report`);
        break; // any HTTP answer means the server is up
      } catch {
        if (Date.now() > deadline) {
          throw new Error(`service never came up:\n${stderr.join("")}`);
        }
        await new Promise((r) => setTimeout(r, 500));
      }
    }
  });

  afterAll(() => {
    proc?.kill();
  });

  it("completes a 10-item study and matches the hand-computed report", async () => {
    // Record every payload the rating client consumes during the
    // session so the blinding scan covers the raw wire, not just the
    // rendered DOM.
    const consumed: string[] = [];
    const spyFetch: FetchLike = async (url, init) => {
      const response = await fetch(url, init);
      if (url.includes("/sessions/")) {
        consumed.push(await response.clone().text());
      }
      return response;
    };
    const client = createClient(base, { fetchImpl: spyFetch });

    const manifest = IMAGES.map((image, i) => ({
      image,
      method: METHODS[i % 3]!,
      task: TASK,
    }));
    const created = await client.createStudy(manifest, { probeFraction: 0.1, seed: 3 });
    expect(created.items).toBe(10); // nine images plus one probe repeat

    const opened = await client.openSession(created.study, "rater-e2e");
    expect(opened.total).toBe(10);

    const dom = new JSDOM(`<div id="root"></div>`);
    const root = dom.window.document.getElementById("root") as HTMLElement;
    const panel = createRatingPanel(root, { imageBase: `${base}/images` });
    const rendered: string[] = [];
    const shownImages: string[] = [];

    const done = await runSession(client, opened.session, {
      onItem: (view) => {
        panel.setBusy(false);
        panel.showItem(view);
        shownImages.push(view.image);
      },
      chooseScore: (view) => {
        rendered.push(root.innerHTML);
        const pending = panel.awaitScore();
        panel.handleKey(String(scoreFor(view.image)));
        panel.setBusy(true);
        return pending;
      },
    });
    panel.showComplete(done.total);
    rendered.push(root.innerHTML);

    expect(done).toEqual({ session: opened.session, total: 10, submitted: 10 });
    expect(shownImages).toHaveLength(10);
    // Every shown reference is a study image; one appears twice (probe).
    expect(new Set(shownImages).size).toBe(9);
    for (const image of shownImages) {
      expect(IMAGES).toContain(image);
    }

    // The served image bytes are exactly what the study directory holds.
    const imageResponse = await fetch(client.imageUrl(shownImages[0]!));
    expect(imageResponse.status).toBe(200);
    const bytes = Buffer.from(await imageResponse.arrayBuffer());
    expect(bytes.equals(TINY_PNG)).toBe(true);

    // Hand-computed per-method means over the manifest (probes count
    // once, which by-name scoring guarantees).
    const expectedRows = METHODS.map((method) => {
      const scores = manifest.filter((e) => e.method === method).map((e) => scoreFor(e.image));
      return {
        method,
        task: TASK,
        mean: scores.reduce((a, b) => a + b, 0) / scores.length,
        ratings: scores.length,
      };
    }).sort((a, b) => (a.method < b.method ? -1 : 1));

    const report = await client.report(created.study);
    expect(report.raters).toBe(1);
    expect(report.removed).toBe(0);
    expect(report.rows).toEqual(expectedRows);

    // Blinding: nothing the rating client received or rendered names a
    // method or task.
    const everything = consumed.join("\n") + rendered.join("\n");
    expect(everything).not.toContain("secret");
    expect(everything).not.toContain("method");
    expect(everything).not.toContain("task");
  }, 120_000);

  it("resumes a second session at the server's cursor after a refresh", async () => {
    const client = createClient(base);
    const manifest = IMAGES.slice(0, 5).map((image) => ({
      image,
      method: "m-resume",
      task: TASK,
    }));
    const created = await client.createStudy(manifest, { probeFraction: 0.1, seed: 9 });
    const opened = await client.openSession(created.study, "rater-refresh");

    // First page load rates two items, then the tab dies.
    let ratedBeforeCrash = 0;
    await runSession(client, opened.session, {
      chooseScore: async (view) => {
        if (ratedBeforeCrash === 2) throw new Error("tab closed");
        ratedBeforeCrash += 1;
        return scoreFor(view.image);
      },
    }).catch(() => {});
    expect(ratedBeforeCrash).toBe(2);

    // The reloaded page asks the server where it stands and finishes.
    const resumedItems: number[] = [];
    const done = await runSession(client, opened.session, {
      onItem: (view) => resumedItems.push(view.item),
      chooseScore: (view) => scoreFor(view.image),
    });

    expect(resumedItems[0]).toBe(2);
    expect(done.total).toBe(opened.total);
    expect(done.submitted).toBe(opened.total - 2);

    const next = (await client.nextItem(opened.session)) as NextPayload;
    expect(next.completed).toBe(true);
  }, 120_000);
});
