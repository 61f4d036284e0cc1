// Command integrity against a stub gateway: every operator action emits
// exactly one correctly-typed wire message with gapless sequence numbers.

import { AddressInfo } from "node:net";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { WebSocket, WebSocketServer } from "ws";
import { ConsoleClient } from "../src/client.js";
import { decode, encode } from "../src/protocol.js";

describe("client over a stub server", () => {
  let server: WebSocketServer;
  let url: string;
  const received: ReturnType<typeof decode>[] = [];

  beforeAll(async () => {
    server = new WebSocketServer({ port: 0 });
    const port = (server.address() as AddressInfo).port;
    url = `ws://127.0.0.1:${port}/ws`;
    server.on("connection", (sock) => {
      sock.on("message", (data) => {
        const env = decode(String(data));
        received.push(env);
        sock.send(encode({ v: 1, type: "ack", seq: received.length, ts: 0, payload: { seq: env.seq } }));
      });
    });
  });

  afterAll(() => {
    server.close();
  });

  it("each action maps to exactly one wire message", async () => {
    const sock = new WebSocket(url);
    await new Promise((resolve) => sock.once("open", resolve));
    const acks: number[] = [];
    sock.on("message", (data) => acks.push(decode(String(data)).payload.seq as number));

    const client = new ConsoleClient({ send: (d) => sock.send(d) });
    client.hello();
    client.trigger("breathing_exercise");
    client.trigger("child_cannot_focus");
    client.endIntervention();
    client.advancePhase();
    client.annotateSpeaker(7, "child");
    client.reassignAddressee(1);

    await new Promise((resolve) => setTimeout(resolve, 300));
    sock.close();

    expect(received.length).toBe(7);
    expect(received.map((e) => e.type)).toEqual([
      "hello",
      "intervention_command",
      "intervention_command",
      "intervention_command",
      "phase_command",
      "annotate_speaker",
      "intervention_command",
    ]);
    expect(received.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5, 6, 7]);
    expect(received[0].payload).toEqual({ role: "operator" });
    expect(received[1].payload).toEqual({ command: "breathing_exercise" });
    expect(received[2].payload).toEqual({ command: "child_cannot_focus" });
    expect(received[3].payload).toEqual({ command: "end" });
    expect(received[4].payload).toEqual({ advance: true });
    expect(received[5].payload).toEqual({ entry_id: 7, role: "child" });
    expect(received[6].payload).toEqual({ reassign_addressee: 1 });
    expect(acks).toEqual([1, 2, 3, 4, 5, 6, 7]);
    expect(received.every((e) => e.v === 1)).toBe(true);
  });
});

describe("client with a spy transport", () => {
  it("no action sends more than one frame", () => {
    const sent: string[] = [];
    const client = new ConsoleClient({ send: (d) => sent.push(d) });
    client.trigger("refocus");
    expect(sent.length).toBe(1);
    client.advancePhase();
    expect(sent.length).toBe(2);
    const first = decode(sent[0]);
    expect(first.type).toBe("intervention_command");
    expect(first.payload).toEqual({ command: "refocus" });
  });
});
