/** Browser wiring: login, 2 s polling, decision submission, what-if sliders.
 *
 * Decisions are serialized per element (a pending submit disables the row)
 * to avoid double-submits; the token lives in memory for the session only.
 */

import { ApiClient } from "./api.js";
import {
  renderAuditTail,
  renderBoard,
  renderDecisionError,
  renderDecisionQueue,
  renderWarningsList,
  renderWhatIfPanel,
} from "./render.js";
import type { DecisionAction, ElementSummary, QaStateName, RoleName, WarningInfo } from "./types.js";

const POLL_MS = 2000;
const DEBOUNCE_MS = 300;

interface AppState {
  client: ApiClient | null;
  role: RoleName;
  elements: ElementSummary[];
  selected: string | null;
  inflightDecisions: Set<string>;
  pollTimer: number | null;
  whatifTimer: number | null;
}

const state: AppState = {
  client: null,
  role: "Inspector",
  elements: [],
  selected: null,
  inflightDecisions: new Set(),
  pollTimer: null,
  whatifTimer: null,
};

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function setBanner(html: string): void {
  el("banner").innerHTML = html;
}

async function refresh(): Promise<void> {
  const client = state.client;
  if (!client) return;

  const elements = await client.getElements();
  if (!elements.ok) {
    setBanner(renderDecisionError(elements.error));
    return;
  }
  state.elements = elements.value;
  el("board").innerHTML = renderBoard(elements.value);
  el("queue").innerHTML = renderDecisionQueue(elements.value, state.role);

  const audit = await client.getAudit();
  if (audit.ok) el("audit").innerHTML = renderAuditTail(audit.value);

  const warnings = await client.getWarnings();
  if (warnings.ok) {
    el("warnings").innerHTML = renderWarningsList(warnings.value as WarningInfo[]);
  }
}

async function submitDecision(elementId: string, action: DecisionAction): Promise<void> {
  const client = state.client;
  if (!client || state.inflightDecisions.has(elementId)) return;

  const rationale = (el("rationale") as HTMLTextAreaElement).value.trim();
  if (!rationale) {
    setBanner(`<div class="banner rejected">rationale is required before submitting</div>`);
    return;
  }
  state.inflightDecisions.add(elementId);
  try {
    const result = await client.postDecision(elementId, action, rationale);
    if (result.ok) {
      setBanner(
        `<div class="banner ok">${elementId}: ${result.value.state} recorded</div>`,
      );
      await refresh();
    } else {
      const states = new Map<string, QaStateName>(
        state.elements.map((e) => [e.id, e.state]),
      );
      setBanner(renderDecisionError(result.error, states));
    }
  } finally {
    state.inflightDecisions.delete(elementId);
  }
}

function scheduleWhatIf(): void {
  if (state.whatifTimer !== null) window.clearTimeout(state.whatifTimer);
  state.whatifTimer = window.setTimeout(() => void runWhatIf(), DEBOUNCE_MS);
}

async function runWhatIf(): Promise<void> {
  const client = state.client;
  if (!client || !state.selected) return;
  const tempC = Number((el("whatif-temp") as HTMLInputElement).value);
  const threshold = Number((el("whatif-threshold") as HTMLInputElement).value);
  el("whatif-temp-value").textContent = `${tempC} °C`;
  el("whatif-threshold-value").textContent = `${Math.round(threshold * 100)} %`;
  const result = await client.getWhatIf(state.selected, tempC, threshold);
  el("whatif").innerHTML = renderWhatIfPanel(result.ok ? result.value : result.error);
}

async function login(): Promise<void> {
  const base = (el("server-url") as HTMLInputElement).value.trim() || window.location.origin;
  const token = (el("token") as HTMLInputElement).value.trim();
  const client = new ApiClient(base, token);
  const session = await client.getSession();
  if (!session.ok) {
    setBanner(renderDecisionError(session.error));
    return;
  }
  state.client = client;
  state.role = session.value.role;
  el("session-info").textContent = `${session.value.actor} (${session.value.role})`;
  setBanner("");
  await refresh();
  if (state.pollTimer !== null) window.clearInterval(state.pollTimer);
  state.pollTimer = window.setInterval(() => void refresh(), POLL_MS);
}

export function start(): void {
  el("login").addEventListener("click", () => void login());

  el("queue").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.tagName !== "BUTTON") return;
    const elementId = target.dataset.element;
    const action = target.dataset.action as DecisionAction | undefined;
    if (elementId && action) void submitDecision(elementId, action);
  });

  el("board").addEventListener("click", (event) => {
    const card = (event.target as HTMLElement).closest("[data-element]");
    if (!card) return;
    state.selected = card.getAttribute("data-element");
    el("whatif-title").textContent = `What-if readiness: ${state.selected}`;
    scheduleWhatIf();
  });

  el("whatif-temp").addEventListener("input", scheduleWhatIf);
  el("whatif-threshold").addEventListener("input", scheduleWhatIf);
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  start();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
