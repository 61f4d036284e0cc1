// DOM wiring: render the view model into the page panels and translate
// clicks into client commands via event delegation. All state transitions
// go through the reducer; the DOM is write-only.

import { ConsoleClient } from "./client.js";
import { renderAll } from "./render.js";
import { StreamItem, ViewModel, initialViewModel, reduce } from "./viewmodel.js";

export class ConsoleUI {
  vm: ViewModel = initialViewModel();

  constructor(
    private root: Document,
    private client: ConsoleClient
  ) {
    root.addEventListener("click", (ev) => this.onClick(ev));
  }

  apply(item: StreamItem): void {
    this.vm = reduce(this.vm, item);
    this.render();
  }

  render(): void {
    const panels = renderAll(this.vm);
    for (const [id, html] of Object.entries(panels)) {
      const el = this.root.getElementById(`panel-${id}`);
      if (el) {
        el.innerHTML = html;
      }
    }
  }

  private onClick(ev: Event): void {
    const target = (ev.target as Element | null)?.closest?.("[data-action]");
    if (!target) {
      return;
    }
    if ((target as HTMLButtonElement).disabled) {
      return;
    }
    const action = target.getAttribute("data-action");
    let sent = null;
    if (action === "trigger") {
      sent = this.client.trigger(target.getAttribute("data-command")!);
    } else if (action === "end") {
      sent = this.client.endIntervention();
    } else if (action === "advance-phase") {
      sent = this.client.advancePhase();
    } else if (action === "annotate") {
      sent = this.client.annotateSpeaker(
        Number(target.getAttribute("data-entry")),
        target.getAttribute("data-role")!
      );
    } else if (action === "reassign") {
      sent = this.client.reassignAddressee(Number(target.getAttribute("data-phase")));
    }
    if (sent) {
      this.apply({ dir: "out", env: sent });
    }
  }
}
