// The console holds no session logic: the view model is a pure fold over
// the tagged message stream (frames received from the server plus frames
// this client sent). Replaying a recorded stream reproduces the identical
// state, which the snapshot test pins.

import { Envelope, EpisodeSnapshot, TimerSnapshot, TranscriptEntry } from "./protocol.js";

export type ConnectionStatus = "connecting" | "ready" | "closed";

export interface PauseRecord {
  remainingMs: number;
  resumed: boolean;
}

export interface Toast {
  code: string;
  detail: string;
}

export interface ViewModel {
  connection: ConnectionStatus;
  transcript: TranscriptEntry[];
  episode: EpisodeSnapshot | null;
  gamePhase: string;
  roles: { guide: string; builder: string } | null;
  timer: TimerSnapshot | null;
  speaking: boolean;
  robot: { script: string | null; phase: string | null };
  pauseLedger: PauseRecord[];
  pendingAcks: number[];
  toasts: Toast[];
}

export type StreamItem =
  | { dir: "in"; env: Envelope }
  | { dir: "out"; env: Envelope }
  | { dir: "status"; status: ConnectionStatus };

export function initialViewModel(): ViewModel {
  return {
    connection: "connecting",
    transcript: [],
    episode: null,
    gamePhase: "setup",
    roles: null,
    timer: null,
    speaking: false,
    robot: { script: null, phase: null },
    pauseLedger: [],
    pendingAcks: [],
    toasts: [],
  };
}

//: client -> server kinds that expect an ack and gate the buttons meanwhile
const ACKED_KINDS = new Set(["hello", "intervention_command", "phase_command", "annotate_speaker"]);

export function reduce(vm: ViewModel, item: StreamItem): ViewModel {
  if (item.dir === "status") {
    return { ...vm, connection: item.status, pendingAcks: item.status === "ready" ? vm.pendingAcks : [] };
  }
  if (item.dir === "out") {
    if (ACKED_KINDS.has(item.env.type)) {
      return { ...vm, pendingAcks: [...vm.pendingAcks, item.env.seq] };
    }
    return vm;
  }
  const env = item.env;
  switch (env.type) {
    case "ack": {
      const acked = env.payload.seq as number;
      const pendingAcks = vm.pendingAcks.filter((s) => s !== acked);
      // the hello ack completes the handshake
      const connection = vm.connection === "connecting" ? "ready" : vm.connection;
      return { ...vm, pendingAcks, connection };
    }
    case "error": {
      const toast = {
        code: String(env.payload.code ?? "error"),
        detail: String(env.payload.detail ?? ""),
      };
      // an error settles whatever command was in flight
      const pendingAcks = vm.pendingAcks.length ? vm.pendingAcks.slice(0, -1) : vm.pendingAcks;
      return { ...vm, toasts: [...vm.toasts, toast], pendingAcks };
    }
    case "transcript_update": {
      const entry = env.payload.entry as unknown as TranscriptEntry;
      const transcript = vm.transcript.filter((e) => e.id !== entry.id);
      transcript.push(entry);
      transcript.sort((a, b) => a.id - b.id);
      return { ...vm, transcript };
    }
    case "state_update": {
      const p = env.payload as Record<string, any>;
      return {
        ...vm,
        episode: (p.episode ?? null) as EpisodeSnapshot | null,
        gamePhase: String(p.game_phase ?? vm.gamePhase),
        roles: (p.roles ?? vm.roles) as ViewModel["roles"],
        timer: (p.timer ?? null) as TimerSnapshot | null,
        speaking: Boolean(p.speaking),
        robot: {
          script: p.behavior?.script ?? null,
          phase: p.behavior?.phase ?? null,
        },
      };
    }
    case "timer_update": {
      const next = env.payload as unknown as TimerSnapshot;
      const ledger = [...vm.pauseLedger];
      const wasPaused = vm.timer?.paused ?? false;
      if (!wasPaused && next.paused) {
        ledger.push({ remainingMs: next.remaining_ms, resumed: false });
      } else if (wasPaused && !next.paused && ledger.length) {
        ledger[ledger.length - 1] = { ...ledger[ledger.length - 1], resumed: true };
      }
      return { ...vm, timer: next, pauseLedger: ledger };
    }
    default:
      return vm;
  }
}

export function replay(items: StreamItem[]): ViewModel {
  return items.reduce(reduce, initialViewModel());
}
