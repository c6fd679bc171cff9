import { BackendUnreachable, type ApiClient } from "./api.js";
import type { AgreementResponse, SweepResponse } from "./types.js";

// Live agreement and threshold-curve state. All numbers are backend
// responses held verbatim; when the backend is unreachable the previous
// snapshot is kept and flagged stale instead of fabricating values.

export interface DashboardState {
  agreement: AgreementResponse | null;
  sweep: SweepResponse | null;
  stale: boolean;
}

export class Dashboard {
  state: DashboardState = { agreement: null, sweep: null, stale: false };

  constructor(private readonly api: ApiClient) {}

  async refresh(): Promise<DashboardState> {
    try {
      const [agreement, sweep] = await Promise.all([this.api.agreement(), this.api.sweep()]);
      this.state = { agreement, sweep, stale: false };
    } catch (err) {
      if (err instanceof BackendUnreachable) {
        this.state = { ...this.state, stale: true };
      } else {
        throw err;
      }
    }
    return this.state;
  }

  /** Threshold the backend selected; the UI only highlights it. */
  highlightedThreshold(): number | null {
    const sweep = this.state.sweep;
    if (!sweep || !sweep.available || sweep.selected_threshold === undefined) {
      return null;
    }
    return sweep.selected_threshold;
  }

  startPolling(intervalMs: number, timer: typeof setInterval = setInterval): () => void {
    const handle = timer(() => void this.refresh(), intervalMs);
    return () => clearInterval(handle as ReturnType<typeof setInterval>);
  }
}
