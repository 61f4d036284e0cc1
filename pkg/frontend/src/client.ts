// Thin command channel: every operator action maps to exactly one wire
// message. Optimistic UI is forbidden, so callers watch pendingAcks on the
// view model and keep controls disabled until the server answers.

import { Envelope, MessageKind, PROTOCOL_VERSION, encode } from "./protocol.js";

export interface Transport {
  send(data: string): void;
}

export class ConsoleClient {
  private seq = 0;

  constructor(private transport: Transport) {}

  private post(type: MessageKind, payload: Record<string, unknown>): Envelope {
    const env: Envelope = { v: PROTOCOL_VERSION, type, seq: ++this.seq, ts: Date.now(), payload };
    this.transport.send(encode(env));
    return env;
  }

  hello(): Envelope {
    return this.post("hello", { role: "operator" });
  }

  trigger(command: string): Envelope {
    return this.post("intervention_command", { command });
  }

  endIntervention(): Envelope {
    return this.post("intervention_command", { command: "end" });
  }

  reassignAddressee(phaseIndex: number): Envelope {
    return this.post("intervention_command", { reassign_addressee: phaseIndex });
  }

  advancePhase(): Envelope {
    return this.post("phase_command", { advance: true });
  }

  annotateSpeaker(entryId: number, role: string): Envelope {
    return this.post("annotate_speaker", { entry_id: entryId, role });
  }
}
