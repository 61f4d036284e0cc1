// Wire protocol v1: one JSON object per WebSocket text frame.
// Mirrors the gateway contract; seq is per-connection, per-direction,
// gapless from 1.

export const PROTOCOL_VERSION = 1;

export type MessageKind =
  | "hello"
  | "sensor_event"
  | "behavior_command_batch"
  | "audio_chunk"
  | "speak_done"
  | "transcript_update"
  | "intervention_command"
  | "state_update"
  | "timer_update"
  | "phase_command"
  | "annotate_speaker"
  | "ack"
  | "error";

export interface Envelope {
  v: number;
  type: MessageKind;
  seq: number;
  ts: number;
  payload: Record<string, unknown>;
}

export interface TranscriptEntry {
  id: number;
  speaker: string;
  text: string;
  t_start: number;
  t_end: number;
  source: string;
}

export interface EpisodeSnapshot {
  strategy: string;
  episode_id: number;
  phase_index: number;
  addressees: string[];
  turns_taken: number;
}

export interface TimerSnapshot {
  remaining_ms: number;
  paused: boolean;
}

export function encode(env: Envelope): string {
  return JSON.stringify({ v: env.v, type: env.type, seq: env.seq, ts: env.ts, payload: env.payload });
}

export function decode(data: string): Envelope {
  const obj = JSON.parse(data);
  if (typeof obj !== "object" || obj === null) {
    throw new Error("frame is not an object");
  }
  if (obj.v !== PROTOCOL_VERSION) {
    throw new Error(`unsupported protocol version ${obj.v}`);
  }
  if (typeof obj.type !== "string" || typeof obj.seq !== "number" || typeof obj.ts !== "number") {
    throw new Error("missing envelope fields");
  }
  return {
    v: obj.v,
    type: obj.type as MessageKind,
    seq: obj.seq,
    ts: obj.ts,
    payload: (obj.payload ?? {}) as Record<string, unknown>,
  };
}
