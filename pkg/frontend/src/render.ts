import type { FlowPhase } from "./labelFlow.js";
import type { DashboardState } from "./dashboard.js";
import type { AgreementResponse, ItemPayload, SweepResponse } from "./types.js";

// Pure HTML builders; app.ts injects the results into the page. Values are
// interpolated directly from backend payloads, never recomputed here.

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderQueueItem(state: FlowPhase, payload: ItemPayload | null): string {
  if (state.phase === "error") {
    return `<div class="error">backend error: ${escapeHtml(state.message)}</div>`;
  }
  if (state.phase === "done") {
    const agreement = state.finalAgreement;
    const kappa = agreement.available ? `${agreement.kappa}` : "awaiting second annotator";
    return `
      <div class="completion">
        <h2>All items labeled</h2>
        <p>${state.progress.labeled} / ${state.progress.total} items</p>
        <p>final kappa: <span id="final-kappa">${kappa}</span></p>
      </div>`;
  }
  if (state.phase !== "labeling") {
    return `<div class="loading">loading…</div>`;
  }
  const item = state.item;
  const parts = [`<div class="item" data-item-id="${escapeHtml(item.item_id)}">`];
  parts.push(`<p class="progress">${state.progress.labeled} / ${state.progress.total}</p>`);
  if (item.multi_target) {
    parts.push(`<p class="flag">targets multiple groups — review carefully</p>`);
  }
  if (state.deferred) {
    parts.push(`<p class="flag">previously deferred</p>`);
  }
  if (item.kind === "image-pair" && payload?.image_b64) {
    parts.push(
      `<img alt="candidate image" src="data:${payload.media_type};base64,${payload.image_b64}">`,
    );
    parts.push(`<p class="cosine">cosine: ${item.cosine}</p>`);
  }
  parts.push(`<p class="phrase">${escapeHtml(item.phrase_text)}</p>`);
  parts.push(
    `<div class="buttons">
      <button data-key="1" data-label="antisemitic">antisemitic (1)</button>
      <button data-key="2" data-label="islamophobic">islamophobic (2)</button>
      <button data-key="3" data-label="irrelevant">irrelevant (3)</button>
      <button data-key="d" data-action="defer">defer (d)</button>
    </div>`,
  );
  parts.push("</div>");
  return parts.join("\n");
}

export function renderAgreementPanel(agreement: AgreementResponse | null): string {
  if (!agreement || !agreement.available) {
    return `<div class="agreement empty">awaiting second annotator</div>`;
  }
  return `
    <div class="agreement">
      <p>items: <span id="agreement-n">${agreement.n_items}</span></p>
      <p>percent agreement: <span id="agreement-percent">${agreement.percent_agreement}</span></p>
      <p>kappa: <span id="agreement-kappa">${agreement.kappa}</span></p>
    </div>`;
}

export function renderSweepChart(sweep: SweepResponse | null): string {
  if (!sweep || !sweep.available || !sweep.thresholds) {
    return `<div class="sweep empty">no labeled pairs yet</div>`;
  }
  const rows = sweep.thresholds
    .map((point) => {
      const selected = point.threshold === sweep.selected_threshold ? " selected" : "";
      const band = `${point.std.f1}`;
      return `<tr class="sweep-row${selected}">
        <td>${point.threshold}</td><td>${point.mean.f1}</td><td>±${band}</td></tr>`;
    })
    .join("\n");
  return `
    <table class="sweep">
      <thead><tr><th>threshold</th><th>mean F1</th><th>std</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
    <p>selected threshold: <span id="selected-threshold">${sweep.selected_threshold}</span></p>`;
}

export function renderDashboard(state: DashboardState): string {
  const banner = state.stale
    ? `<div class="banner stale">backend unreachable — showing last known values</div>`
    : "";
  return `${banner}${renderAgreementPanel(state.agreement)}${renderSweepChart(state.sweep)}`;
}
