// Browser entry point: mounts the app and wires DOM events to it.
// All state lives in App; this file only paints and forwards events.

import { ApiClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = new App({ api: new ApiClient("") });

function paint(): void {
  root!.innerHTML = app.render();
  const input = root!.querySelector<HTMLTextAreaElement>("#turn-input");
  if (input && document.activeElement === document.body) {
    input.focus();
    input.setSelectionRange(input.value.length, input.value.length);
  }
}

function run(action: Promise<void>): void {
  paint(); // show optimistic state (disabled input, thinking entry)
  action.then(paint, (err) => {
    console.error("action failed", err);
    paint();
  });
}

root.addEventListener("input", (ev) => {
  const el = ev.target as HTMLElement;
  if (el instanceof HTMLInputElement && el.dataset.field) {
    app.setFormField(el.dataset.field as any, el.value);
  } else if (el instanceof HTMLTextAreaElement && el.id === "turn-input") {
    app.setDraft(el.value);
  }
});

root.addEventListener("click", (ev) => {
  const el = (ev.target as HTMLElement).closest("[data-action],[data-env]") as HTMLElement | null;
  if (!el) return;
  if (el.dataset.env) {
    app.clickChip(el.dataset.env);
    paint();
  } else if (el.dataset.action === "create") {
    run(app.createCharacter());
  } else if (el.dataset.action === "retry") {
    run(app.retryCreate());
  } else if (el.dataset.action === "send") {
    run(app.submitTurn());
  }
});

root.addEventListener("keydown", (ev) => {
  const el = ev.target as HTMLElement;
  if (el instanceof HTMLTextAreaElement && el.id === "turn-input" && ev.key === "Enter" && !ev.shiftKey) {
    ev.preventDefault();
    run(app.submitTurn());
  }
});

paint();
