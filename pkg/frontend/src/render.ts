// Pure view: ViewModel -> HTML strings per panel. DOM wiring lives in
// ui.ts; keeping rendering string-pure makes the snapshot test trivial.

import {
  BEHAVIOR_CODES,
  BEHAVIOR_CODE_LABELS,
  CODE_TO_STRATEGY,
  PHASE_ORDER,
  STRATEGIES,
  STRATEGY_LABELS,
} from "./labels.js";
import { ViewModel } from "./viewmodel.js";

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function mmss(ms: number): string {
  const total = Math.max(0, Math.floor(ms / 1000));
  const m = Math.floor(total / 60);
  const s = total % 60;
  return `${m}:${String(s).padStart(2, "0")}`;
}

export function renderStatus(vm: ViewModel): string {
  const cls = vm.connection === "ready" ? "ok" : vm.connection === "closed" ? "bad" : "warn";
  const speaking = vm.speaking ? ` <span class="badge warn">robot speaking</span>` : "";
  return `<span class="badge ${cls}">${vm.connection}</span>${speaking}`;
}

export function renderTimer(vm: ViewModel): string {
  if (!vm.timer) {
    return `<span class="muted">no game timer (${esc(vm.gamePhase)})</span>`;
  }
  const paused = vm.timer.paused ? ` <span class="badge warn">PAUSED</span>` : "";
  const ledger = vm.pauseLedger
    .map((p, i) => `#${i + 1} at ${mmss(p.remainingMs)} remaining${p.resumed ? "" : " (open)"}`)
    .join("&#10;");
  const tooltip = ledger ? ` title="Pause ledger:&#10;${ledger}"` : "";
  return `<span class="timer"${tooltip}>${mmss(vm.timer.remaining_ms)}</span>${paused}`;
}

export function renderSession(vm: ViewModel): string {
  const atEnd = vm.gamePhase === "debrief";
  const phases = PHASE_ORDER.map((p) =>
    p === vm.gamePhase ? `<b class="phase now">${p}</b>` : `<span class="phase">${p}</span>`
  ).join(" → ");
  const roles = vm.roles
    ? `<div class="muted">guide: ${esc(vm.roles.guide)} · builder: ${esc(vm.roles.builder)}</div>`
    : "";
  return `
    <div>${phases}</div>${roles}
    <button data-action="advance-phase" ${atEnd || busy(vm) ? "disabled" : ""}>Advance phase</button>`;
}

// strategies whose addressee plan has a parent phase then a child phase
const TWO_PHASE_STRATEGIES = new Set(["physical_touch", "emotion_validation"]);

export function renderEpisode(vm: ViewModel): string {
  if (!vm.episode) {
    return `<div class="muted">standby — no active intervention</div>`;
  }
  const e = vm.episode;
  const disabled = busy(vm) ? "disabled" : "";
  const reassign = TWO_PHASE_STRATEGIES.has(e.strategy)
    ? `<div>
        <button data-action="reassign" data-phase="0" ${disabled}>address parent</button>
        <button data-action="reassign" data-phase="1" ${disabled}>address child</button>
      </div>`
    : "";
  return `
    <div><b>${esc(STRATEGY_LABELS[e.strategy] ?? e.strategy)}</b> (episode ${e.episode_id})</div>
    <div class="muted">addressing: ${e.addressees.join(" + ") || "—"} · turn ${e.turns_taken}</div>
    <div class="muted">robot: ${esc(vm.robot.script ?? "—")}/${esc(vm.robot.phase ?? "—")}</div>
    ${reassign}`;
}

function busy(vm: ViewModel): boolean {
  return vm.connection !== "ready" || vm.pendingAcks.length > 0;
}

export function renderTriggers(vm: ViewModel): string {
  const disabled = busy(vm) ? "disabled" : "";
  const codes = BEHAVIOR_CODES.map((code) => {
    const mapped = CODE_TO_STRATEGY[code];
    return `
      <button class="code" data-action="trigger" data-command="${code}" ${disabled}>
        ${esc(BEHAVIOR_CODE_LABELS[code])}
        <small>→ ${esc(STRATEGY_LABELS[mapped] ?? mapped)}</small>
      </button>`;
  }).join("");
  const strategies = STRATEGIES.map(
    (s) => `
      <button class="strategy" data-action="trigger" data-command="${s}" ${disabled}>
        ${esc(STRATEGY_LABELS[s])}
      </button>`
  ).join("");
  return `
    <h3>Observed behaviors</h3><div class="grid">${codes}</div>
    <h3>Strategies</h3><div class="grid">${strategies}
      <button class="strategy end" data-action="end" ${disabled}>End / Standby</button>
    </div>`;
}

export function renderTranscript(vm: ViewModel): string {
  if (!vm.transcript.length) {
    return `<div class="muted">no utterances yet</div>`;
  }
  const canTag = vm.connection === "ready" && vm.pendingAcks.length === 0;
  return vm.transcript
    .map((e) => {
      const tag =
        e.speaker === "unknown" && canTag
          ? ` <button data-action="annotate" data-entry="${e.id}" data-role="parent">parent?</button>` +
            `<button data-action="annotate" data-entry="${e.id}" data-role="child">child?</button>`
          : "";
      return `<div class="line ${esc(e.speaker)}"><b>#${e.id} ${esc(e.speaker)}</b> ${esc(e.text)}${tag}</div>`;
    })
    .join("");
}

export function renderToasts(vm: ViewModel): string {
  return vm.toasts
    .slice(-3)
    .map((t) => `<div class="toast">${esc(t.code)}: ${esc(t.detail)}</div>`)
    .join("");
}

export function renderAll(vm: ViewModel): Record<string, string> {
  return {
    status: renderStatus(vm),
    timer: renderTimer(vm),
    session: renderSession(vm),
    episode: renderEpisode(vm),
    triggers: renderTriggers(vm),
    transcript: renderTranscript(vm),
    toasts: renderToasts(vm),
  };
}
