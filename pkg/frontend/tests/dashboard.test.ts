import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { Dashboard } from "../src/dashboard.js";
import { FakeBackend, phraseItems } from "./fakeBackend.js";
import type { SweepResponse } from "../src/types.js";

const CANNED_SWEEP: SweepResponse = {
  available: true,
  n_pairs: 17,
  selected_threshold: 0.3,
  thresholds: [
    { threshold: 0.2, mean: { f1: 0.714285714, accuracy: 0.8, precision: 0.6, recall: 0.9 }, std: { f1: 0.05, accuracy: 0.02, precision: 0.07, recall: 0.01 } },
    { threshold: 0.3, mean: { f1: 0.8123456789, accuracy: 0.84, precision: 0.47, recall: 0.8 }, std: { f1: 0.033, accuracy: 0.01, precision: 0.05, recall: 0.02 } },
    { threshold: 0.4, mean: { f1: 0.5, accuracy: 0.7, precision: 0.9, recall: 0.35 }, std: { f1: 0.1, accuracy: 0.04, precision: 0.02, recall: 0.08 } },
  ],
};

function setup(): { backend: FakeBackend; dashboard: Dashboard } {
  const backend = new FakeBackend(phraseItems(4));
  backend.cannedSweep = CANNED_SWEEP;
  const dashboard = new Dashboard(new ApiClient("http://fake", backend.fetch));
  return { backend, dashboard };
}

describe("dashboard", () => {
  it("holds backend responses verbatim, computing nothing", async () => {
    const { backend, dashboard } = setup();
    backend.submit("ph0", "ann1", "antisemitic");
    backend.submit("ph0", "ann2", "antisemitic");
    const state = await dashboard.refresh();
    expect(state.agreement).toEqual(backend.agreement());
    expect(state.sweep).toEqual(CANNED_SWEEP);
    // exact value identity on the displayed statistics
    expect(Object.is(state.sweep?.thresholds?.[1].mean.f1, 0.8123456789)).toBe(true);
    expect(Object.is(state.agreement?.kappa, backend.agreement().kappa)).toBe(true);
  });

  it("highlights exactly the threshold the backend selected", async () => {
    const { dashboard } = setup();
    await dashboard.refresh();
    expect(dashboard.highlightedThreshold()).toBe(0.3);
  });

  it("reports no highlight before any sweep exists", async () => {
    const { backend, dashboard } = setup();
    backend.cannedSweep = { available: false };
    await dashboard.refresh();
    expect(dashboard.highlightedThreshold()).toBeNull();
  });

  it("keeps the last snapshot and flags stale when the backend vanishes", async () => {
    const { backend, dashboard } = setup();
    const fresh = await dashboard.refresh();
    expect(fresh.stale).toBe(false);
    backend.failing = true;
    const stale = await dashboard.refresh();
    expect(stale.stale).toBe(true);
    expect(stale.sweep).toEqual(CANNED_SWEEP); // no fabricated values
    backend.failing = false;
    const recovered = await dashboard.refresh();
    expect(recovered.stale).toBe(false);
  });

  it("shows awaiting state with a single annotator", async () => {
    const { backend, dashboard } = setup();
    backend.submit("ph0", "ann1", "antisemitic");
    const state = await dashboard.refresh();
    expect(state.agreement).toEqual({ available: false });
  });

  it("polling can be started and stopped", async () => {
    const { dashboard } = setup();
    let ticks = 0;
    const timer = ((fn: () => void) => {
      ticks += 1;
      fn();
      return 1 as unknown as ReturnType<typeof setInterval>;
    }) as unknown as typeof setInterval;
    const stop = dashboard.startPolling(1000, timer);
    expect(ticks).toBe(1);
    stop();
  });
});
