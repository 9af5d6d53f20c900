// Browser entry point. Reads ?server= and ?session= from the query
// string, then drives the session loop with the rating panel supplying
// scores. One request in flight at a time; input is locked while a
// score is being submitted.

import { createClient } from "./api.js";
import { runSession } from "./session.js";
import { createRatingPanel } from "./view.js";

function fail(root: HTMLElement, message: string): void {
  const note = root.ownerDocument.createElement("p");
  note.className = "mos-error";
  note.textContent = message;
  root.replaceChildren(note);
}

export async function start(root: HTMLElement, locationSearch: string): Promise<void> {
  const params = new URLSearchParams(locationSearch);
  const server = params.get("server");
  const session = params.get("session");
  if (!server || !session) {
    fail(root, "Missing ?server= or ?session= in the URL.");
    return;
  }

  const client = createClient(server);
  const panel = createRatingPanel(root, { imageBase: `${client.baseUrl}/images` });
  root.ownerDocument.addEventListener("keydown", (event) => panel.handleKey(event.key));

  try {
    const done = await runSession(client, session, {
      onItem: (view) => {
        panel.setBusy(false);
        panel.showItem(view);
      },
      chooseScore: (view) => panel.awaitScore().then((score) => {
        panel.setBusy(true);
        return score;
      }),
    });
    panel.showComplete(done.total);
  } catch (error) {
    fail(root, `Session failed: ${error instanceof Error ? error.message : error}`);
  }
}

const rootElement = typeof document !== "undefined" ? document.getElementById("mos-root") : null;
if (rootElement) {
  void start(rootElement, window.location.search);
}
