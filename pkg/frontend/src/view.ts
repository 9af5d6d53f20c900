// Single-item rating panel: the image under judgment, five score
// buttons, and a progress bar. Keys 1-5 mirror the buttons.
//
// This layer only ever sees item index, image reference, and totals.
// The service strips method and task labels before they reach the
// wire, and nothing here reintroduces them.

import { RatingView } from "./session.js";

export const SCORE_VALUES = [1, 2, 3, 4, 5] as const;

export const SCORE_HINTS: Record<number, string> = {
  1: "bad",
  2: "poor",
  3: "fair",
  4: "good",
  5: "excellent",
};

export interface RatingPanelOptions {
  /** Prefix for image references, e.g. "http://host:port/images". */
  imageBase: string;
}

export interface RatingPanel {
  readonly root: HTMLElement;
  /** Show one item and enable scoring for it. */
  showItem(view: RatingView): void;
  /** Swap the whole panel for the completion notice. */
  showComplete(total: number): void;
  /** Grey out the buttons while a submission is in flight. */
  setBusy(busy: boolean): void;
  /** Resolves with the rater's choice for the currently shown item. */
  awaitScore(): Promise<number>;
  /** Keydown hook; digits 1-5 score, anything else is ignored. */
  handleKey(key: string): void;
  dispose(): void;
}

export function createRatingPanel(
  root: HTMLElement,
  options: RatingPanelOptions,
): RatingPanel {
  const doc = root.ownerDocument;
  const imageBase = options.imageBase.replace(/\/+$/, "");

  const progressText = doc.createElement("div");
  progressText.className = "mos-progress-text";

  const progressBar = doc.createElement("div");
  progressBar.className = "mos-progress-bar";
  const progressFill = doc.createElement("div");
  progressFill.className = "mos-progress-fill";
  progressBar.appendChild(progressFill);

  const image = doc.createElement("img");
  image.className = "mos-image";
  image.alt = "image under judgment";

  const buttonRow = doc.createElement("div");
  buttonRow.className = "mos-scores";
  const buttons = new Map<number, HTMLButtonElement>();
  for (const value of SCORE_VALUES) {
    const button = doc.createElement("button");
    button.type = "button";
    button.className = "mos-score";
    button.textContent = String(value);
    button.title = SCORE_HINTS[value] ?? "";
    button.dataset.score = String(value);
    buttonRow.appendChild(button);
    buttons.set(value, button);
  }

  root.replaceChildren(progressText, progressBar, image, buttonRow);

  let busy = false;
  let resolveScore: ((score: number) => void) | null = null;

  function pick(value: number): void {
    if (busy || resolveScore === null) return;
    if (!SCORE_VALUES.includes(value as (typeof SCORE_VALUES)[number])) return;
    const settle = resolveScore;
    resolveScore = null;
    const chosen = buttons.get(value);
    if (chosen) chosen.classList.add("mos-selected");
    settle(value);
  }

  function onClick(event: Event): void {
    const target = event.target as HTMLElement | null;
    const raw = target?.dataset?.score;
    if (raw !== undefined) pick(Number(raw));
  }

  buttonRow.addEventListener("click", onClick);

  return {
    root,

    showItem(view) {
      for (const button of buttons.values()) {
        button.classList.remove("mos-selected");
      }
      image.src = `${imageBase}/${encodeURIComponent(view.image)}`;
      const percent = Math.round(view.progress * 100);
      progressText.textContent = `image ${view.item + 1} (${percent}% done)`;
      progressFill.style.width = `${percent}%`;
    },

    showComplete(total) {
      const done = doc.createElement("div");
      done.className = "mos-complete";
      done.textContent = `All ${total} images rated. Thank you.`;
      root.replaceChildren(done);
      resolveScore = null;
    },

    setBusy(next) {
      busy = next;
      for (const button of buttons.values()) {
        button.disabled = next;
      }
    },

    awaitScore() {
      return new Promise<number>((resolve) => {
        resolveScore = resolve;
      });
    },

    handleKey(key) {
      const value = Number(key);
      if (Number.isInteger(value)) pick(value);
    },

    dispose() {
      buttonRow.removeEventListener("click", onClick);
      resolveScore = null;
    },
  };
}
