// Entry point: connect to the gateway as the operator and stream frames
// into the view model. The server address and token come from the query
// string (?server=ws://host:port/ws&token=...) or the login form.

import { ConsoleClient } from "./client.js";
import { decode } from "./protocol.js";
import { ConsoleUI } from "./ui.js";

function connect(server: string, token: string): void {
  const url = token ? `${server}?token=${encodeURIComponent(token)}` : server;
  const ws = new WebSocket(url);
  const client = new ConsoleClient({ send: (d) => ws.send(d) });
  const ui = new ConsoleUI(document, client);
  ui.render();

  ws.onopen = () => {
    ui.apply({ dir: "out", env: client.hello() });
  };
  ws.onmessage = (ev) => {
    try {
      ui.apply({ dir: "in", env: decode(String(ev.data)) });
    } catch (e) {
      console.error("undecodable frame", e);
    }
  };
  ws.onclose = () => {
    ui.apply({ dir: "status", status: "closed" });
    // reconnect: the server resyncs full state after hello
    setTimeout(() => connect(server, token), 2000);
  };
}

function boot(): void {
  const params = new URLSearchParams(location.search);
  const server = params.get("server");
  const token = params.get("token") ?? "";
  if (server) {
    connect(server, token);
    return;
  }
  const form = document.getElementById("login-form") as HTMLFormElement;
  form.style.display = "block";
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const server = (document.getElementById("login-server") as HTMLInputElement).value;
    const token = (document.getElementById("login-token") as HTMLInputElement).value;
    form.style.display = "none";
    connect(server, token);
  });
}

boot();
