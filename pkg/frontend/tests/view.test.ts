import { JSDOM } from "jsdom";
import { afterEach, describe, expect, it, vi } from "vitest";

import { createClient } from "../src/api";
import { runSession } from "../src/session";
import { createRatingPanel, RatingPanel } from "../src/view";
import { MockService } from "./mockService";

function freshPanel(): { panel: RatingPanel; root: HTMLElement } {
  const dom = new JSDOM(`<div id="root"></div>`);
  const root = dom.window.document.getElementById("root") as HTMLElement;
  const panel = createRatingPanel(root, { imageBase: "http://host/images" });
  return { panel, root };
}

function view(item: number, image: string, progress: number) {
  return { item, image, progress, score: null };
}

describe("rating panel", () => {
  afterEach(() => {
    vi.restoreAllMocks();
  });

  it("renders exactly the five scale buttons", () => {
    const { root } = freshPanel();
    const labels = [...root.querySelectorAll("button")].map((b) => b.textContent);
    expect(labels).toEqual(["1", "2", "3", "4", "5"]);
  });

  it("resolves the awaited score on click", async () => {
    const { panel, root } = freshPanel();
    panel.showItem(view(0, "a.png", 0));
    const pending = panel.awaitScore();
    const button = root.querySelector<HTMLButtonElement>('button[data-score="4"]')!;
    button.click();
    await expect(pending).resolves.toBe(4);
    expect(button.classList.contains("mos-selected")).toBe(true);
  });

  it("resolves the awaited score on digit keys and ignores others", async () => {
    const { panel } = freshPanel();
    const pending = panel.awaitScore();
    for (const key of ["0", "6", "9", "x", "Enter", " "]) {
      panel.handleKey(key);
    }
    panel.handleKey("5");
    await expect(pending).resolves.toBe(5);
  });

  it("ignores input while a submission is in flight", async () => {
    const { panel, root } = freshPanel();
    panel.setBusy(true);
    const settled = vi.fn();
    void panel.awaitScore().then(settled);
    panel.handleKey("3");
    root.querySelector<HTMLButtonElement>('button[data-score="2"]')?.click();
    await Promise.resolve();
    expect(settled).not.toHaveBeenCalled();
    for (const button of root.querySelectorAll("button")) {
      expect(button.disabled).toBe(true);
    }

    panel.setBusy(false);
    panel.handleKey("3");
    await Promise.resolve();
    expect(settled).toHaveBeenCalledWith(3);
  });

  it("shows the image by reference with progress", () => {
    const { panel, root } = freshPanel();
    panel.showItem(view(2, "pair 0003.png", 0.4));
    const img = root.querySelector("img")!;
    expect(img.src).toBe("http://host/images/pair%200003.png");
    expect(root.textContent).toContain("image 3");
    expect(root.textContent).toContain("40% done");
    const fill = root.querySelector<HTMLElement>(".mos-progress-fill")!;
    expect(fill.style.width).toBe("40%");
  });

  it("clears the selection highlight between items", async () => {
    const { panel, root } = freshPanel();
    panel.showItem(view(0, "a.png", 0));
    const pending = panel.awaitScore();
    panel.handleKey("2");
    await pending;
    panel.showItem(view(1, "b.png", 0.5));
    expect(root.querySelectorAll(".mos-selected")).toHaveLength(0);
  });

  it("swaps to a completion notice at the end", () => {
    const { panel, root } = freshPanel();
    panel.showComplete(10);
    expect(root.querySelectorAll("button")).toHaveLength(0);
    expect(root.textContent).toContain("All 10 images rated");
  });
});

describe("blinding", () => {
  it("never renders or logs method and task labels", async () => {
    const items = Array.from({ length: 6 }, (_, i) => ({
      image: `img_${i}.png`,
      method: i % 2 ? "secret-method-alpha" : "secret-method-beta",
      task: "secret-task-night2day",
      probe: i === 5,
    }));
    const mock = new MockService(items);
    const client = createClient("http://mock", { fetchImpl: mock.fetch });
    const { panel, root } = freshPanel();

    const logSpy = vi.spyOn(console, "log");
    const errorSpy = vi.spyOn(console, "error");
    const rendered: string[] = [];

    await runSession(client, mock.sessionId, {
      onItem: (v) => panel.showItem(v),
      chooseScore: (v) => {
        rendered.push(root.innerHTML);
        const pending = panel.awaitScore();
        panel.handleKey(String((v.item % 5) + 1));
        return pending;
      },
      backoff: { baseMs: 1, factor: 1, maxAttempts: 2 },
      sleep: async () => {},
    });
    panel.showComplete(items.length);
    rendered.push(root.innerHTML);

    const everything = rendered.join("\n");
    expect(everything).not.toContain("secret");
    expect(everything).not.toContain("method");
    expect(everything).not.toContain("task");
    for (const spy of [logSpy, errorSpy]) {
      for (const call of spy.mock.calls) {
        expect(JSON.stringify(call)).not.toContain("secret");
      }
    }
    expect(mock.ratings).toEqual([1, 2, 3, 4, 5, 1]);
  });
});
