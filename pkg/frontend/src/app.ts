import { ApiClient } from "./api.js";
import { Dashboard } from "./dashboard.js";
import { keyToAction } from "./keyboard.js";
import { LabelSession } from "./labelFlow.js";
import { renderDashboard, renderQueueItem } from "./render.js";
import type { ItemPayload } from "./types.js";

const POLL_INTERVAL_MS = 3000;

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const annotator = params.get("annotator") ?? window.prompt("annotator id?") ?? "";
  const api = new ApiClient("");
  const session = new LabelSession(api, annotator);
  const dashboard = new Dashboard(api);

  const itemPane = document.getElementById("item-pane")!;
  const dashPane = document.getElementById("dashboard-pane")!;

  async function paintItem(): Promise<void> {
    let payload: ItemPayload | null = null;
    if (session.state.phase === "labeling" && session.state.item.kind === "image-pair") {
      payload = await api.item(session.state.item.item_id);
    }
    itemPane.innerHTML = renderQueueItem(session.state, payload);
    itemPane.querySelectorAll("button[data-label]").forEach((button) => {
      button.addEventListener("click", async () => {
        const label = (button as HTMLButtonElement).dataset.label as
          | "antisemitic"
          | "islamophobic"
          | "irrelevant";
        await session.submit(label);
        await paintItem();
        await paintDashboard();
      });
    });
    itemPane.querySelector("button[data-action='defer']")?.addEventListener("click", async () => {
      await session.defer();
      await paintItem();
    });
  }

  async function paintDashboard(): Promise<void> {
    await dashboard.refresh();
    dashPane.innerHTML = renderDashboard(dashboard.state);
  }

  document.addEventListener("keydown", async (event) => {
    if (session.state.phase !== "labeling") {
      return;
    }
    const action = keyToAction(event.key);
    if (action.type === "label") {
      await session.submit(action.label);
      await paintItem();
      await paintDashboard();
    } else if (action.type === "defer") {
      await session.defer();
      await paintItem();
    }
  });

  await session.start();
  await paintItem();
  await paintDashboard();
  dashboard.startPolling(POLL_INTERVAL_MS);
  setInterval(() => {
    dashPane.innerHTML = renderDashboard(dashboard.state);
  }, POLL_INTERVAL_MS);
}

void boot();
