/** Pure render-to-string views.
 *
 * Every state string, recommendation, forecast hour, and audit row shown
 * here is lifted verbatim from an API response: the console renders what the
 * twin said, it never derives QA conclusions of its own. That invariant is
 * what the mock-diff tests pin down.
 */

import type {
  ApiError,
  AuditEntry,
  DecisionAction,
  ElementSummary,
  QaStateName,
  RoleName,
  WarningInfo,
  WhatIfResponse,
} from "./types.js";

export const STATE_COLORS: Record<QaStateName, string> = {
  Pending: "grey",
  Provisional: "amber",
  Released: "green",
  Hold: "orange",
  NonConformance: "red",
};

/** Client-side affordance only; the server re-checks every action. */
export const ROLE_ACTIONS: Record<RoleName, DecisionAction[]> = {
  Inspector: [],
  Engineer: ["release", "hold", "lift_hold"],
  QaManager: ["release", "hold", "lift_hold", "open_ncr", "close_ncr"],
};

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function warningBadges(warnings: WarningInfo[]): string {
  if (warnings.length === 0) return "";
  const items = warnings
    .map((w) => `<li class="warning" title="${escapeHtml(w.detail)}">${escapeHtml(w.kind)}</li>`)
    .join("");
  return `<ul class="warnings">${items}</ul>`;
}

export function renderElementCard(el: ElementSummary): string {
  const color = STATE_COLORS[el.state];
  const gate = el.gate_open ? "gate open" : "gate closed";
  return [
    `<article class="card state-${color}" data-element="${escapeHtml(el.id)}" data-state="${el.state}">`,
    `<header><span class="id">${escapeHtml(el.id)}</span>`,
    `<span class="kind">${escapeHtml(el.kind)}</span></header>`,
    `<span class="state ${color}">${el.state}</span>`,
    `<span class="gate">${gate}</span>`,
    warningBadges(el.warnings),
    `</article>`,
  ].join("");
}

/** Station-axis strip, one row per span, cards ordered by station. */
export function renderBoard(elements: ElementSummary[]): string {
  const spans = new Map<string, ElementSummary[]>();
  for (const el of elements) {
    const span = el.id.includes("-") ? el.id.split("-")[0] : "span";
    const bucket = spans.get(span) ?? [];
    bucket.push(el);
    spans.set(span, bucket);
  }
  const rows = [...spans.entries()]
    .sort(([a], [b]) => a.localeCompare(b))
    .map(([span, els]) => {
      const cards = els
        .slice()
        .sort((a, b) => (a.station_m ?? 0) - (b.station_m ?? 0))
        .map(renderElementCard)
        .join("");
      return `<section class="span" data-span="${escapeHtml(span)}"><h3>${escapeHtml(span)}</h3><div class="strip">${cards}</div></section>`;
    });
  return `<div class="board">${rows.join("")}</div>`;
}

/** Elements awaiting a human: recommendation differs, or sitting Provisional. */
export function decisionQueue(elements: ElementSummary[]): ElementSummary[] {
  return elements.filter(
    (el) => el.recommended !== el.state || el.state === "Provisional",
  );
}

export function renderDecisionQueue(elements: ElementSummary[], role: RoleName): string {
  const queue = decisionQueue(elements);
  if (queue.length === 0) {
    return `<div class="queue empty">No elements awaiting a decision.</div>`;
  }
  const allowed = ROLE_ACTIONS[role];
  const rows = queue.map((el) => {
    const buttons = allowed
      .map(
        (action) =>
          `<button data-element="${escapeHtml(el.id)}" data-action="${action}">${action}</button>`,
      )
      .join("");
    const disabledNote =
      allowed.length === 0 ? `<span class="no-actions">view only</span>` : "";
    return [
      `<tr data-element="${escapeHtml(el.id)}">`,
      `<td class="id">${escapeHtml(el.id)}</td>`,
      `<td class="state">${el.state}</td>`,
      `<td class="recommended">${el.recommended}</td>`,
      `<td class="actions">${buttons}${disabledNote}</td>`,
      `</tr>`,
    ].join("");
  });
  return [
    `<table class="queue"><thead><tr><th>element</th><th>state</th><th>recommended</th><th>actions</th></tr></thead>`,
    `<tbody>${rows.join("")}</tbody></table>`,
  ].join("");
}

export function renderAuditTail(entries: AuditEntry[], limit = 8): string {
  const tail = entries.slice(-limit);
  const rows = tail.map((entry) =>
    [
      `<tr class="${entry.outcome}" data-seq="${entry.seq}">`,
      `<td>${entry.seq}</td>`,
      `<td>${escapeHtml(entry.at)}</td>`,
      `<td>${escapeHtml(entry.actor)}</td>`,
      `<td>${escapeHtml(entry.element)}</td>`,
      `<td>${entry.from} &rarr; ${entry.to}</td>`,
      `<td>${escapeHtml(entry.outcome)}</td>`,
      `<td class="rationale">${escapeHtml(entry.rationale)}</td>`,
      `</tr>`,
    ].join(""),
  );
  return `<table class="audit"><tbody>${rows.join("")}</tbody></table>`;
}

/** Renders a refused decision inline, the server's reason verbatim. */
export function renderDecisionError(
  error: ApiError,
  elementStates: Map<string, QaStateName> = new Map(),
): string {
  if (error.status === 401 || error.status === 403) {
    const who = error.role ? ` (role ${escapeHtml(error.role)})` : "";
    return `<div class="banner auth-error">${escapeHtml(error.reason)}${who}</div>`;
  }
  if (error.reason === "GateBlocked" && error.predecessors) {
    const blockers = error.predecessors
      .map((id) => {
        const state = elementStates.get(id);
        return state ? `${escapeHtml(id)} (${state})` : escapeHtml(id);
      })
      .join(", ");
    return `<div class="banner blocked">blocked by: ${blockers}</div>`;
  }
  if (error.reason === "IllegalTransition") {
    const detail = error.from ? ` from ${error.from}` : "";
    return `<div class="banner rejected">illegal transition${detail}</div>`;
  }
  return `<div class="banner rejected">${escapeHtml(error.reason)}</div>`;
}

export function renderWarningsList(warnings: WarningInfo[]): string {
  if (warnings.length === 0) return `<div class="warnings empty">No active warnings.</div>`;
  const items = warnings.map(
    (w) =>
      `<li class="warning ${escapeHtml(w.kind)}"><strong>${escapeHtml(w.kind)}</strong> ${escapeHtml(w.element)}: ${escapeHtml(w.detail)}</li>`,
  );
  return `<ul class="warnings">${items.join("")}</ul>`;
}

const CHART_W = 560;
const CHART_H = 220;
const PAD = 30;

/** SVG strength chart: server-computed curve, threshold line, measured points.
 * Only pixel scaling happens here; strengths and hours come off the wire. */
function renderChart(data: WhatIfResponse): string {
  const curve = data.curve;
  if (curve.length === 0) return "";
  const xs = curve.map((p) => p.hours_from_start);
  const measuredXs = data.measured.map((m) => m.age_days * 24);
  const xMax = Math.max(...xs, ...measuredXs, 1);
  const yMax = Math.max(
    ...curve.map((p) => p.upper_mpa),
    ...data.measured.map((m) => m.strength_mpa),
    data.threshold_mpa,
    1,
  );
  const sx = (x: number) => PAD + ((CHART_W - 2 * PAD) * x) / xMax;
  const sy = (y: number) => CHART_H - PAD - ((CHART_H - 2 * PAD) * y) / (yMax * 1.05);

  const mean = curve.map((p) => `${sx(p.hours_from_start).toFixed(1)},${sy(p.mean_mpa).toFixed(1)}`).join(" ");
  const lower = curve.map((p) => `${sx(p.hours_from_start).toFixed(1)},${sy(p.lower_mpa).toFixed(1)}`).join(" ");
  const upper = curve.map((p) => `${sx(p.hours_from_start).toFixed(1)},${sy(p.upper_mpa).toFixed(1)}`).join(" ");
  const thresholdY = sy(data.threshold_mpa).toFixed(1);
  const points = data.measured
    .map(
      (m) =>
        `<circle class="measured ${m.cured}" cx="${sx(m.age_days * 24).toFixed(1)}" cy="${sy(m.strength_mpa).toFixed(1)}" r="4"><title>${m.strength_mpa} MPa @ ${m.age_days} d (${escapeHtml(m.cured)}-cured)</title></circle>`,
    )
    .join("");

  return [
    `<svg class="whatif-chart" viewBox="0 0 ${CHART_W} ${CHART_H}" role="img">`,
    `<polyline class="band upper" fill="none" points="${upper}"/>`,
    `<polyline class="band lower" fill="none" points="${lower}"/>`,
    `<polyline class="mean" fill="none" points="${mean}"/>`,
    `<line class="threshold" x1="${PAD}" y1="${thresholdY}" x2="${CHART_W - PAD}" y2="${thresholdY}"/>`,
    points,
    `</svg>`,
  ].join("");
}

/** The forecast headline repeats server numbers verbatim; no client math. */
export function renderWhatIfPanel(result: WhatIfResponse | ApiError): string {
  if ("status" in result) {
    if (result.status === 409) {
      return `<div class="whatif empty-state">Insufficient data: this element has no calibrated model or temperature history yet.</div>`;
    }
    return `<div class="whatif empty-state">${escapeHtml(result.reason)}</div>`;
  }
  const headline = result.reachable
    ? `reaches threshold ${result.threshold_mpa} MPa at +${result.hours_from_start} h`
    : `unreachable at assumed temperature (${result.assumed_temp_c} &deg;C)`;
  return [
    `<div class="whatif" data-element="${escapeHtml(result.element)}" data-reachable="${result.reachable}">`,
    `<p class="headline">${headline}</p>`,
    renderChart(result),
    `</div>`,
  ].join("");
}
