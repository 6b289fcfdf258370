// Browser entrypoint: wires the reducer, renderer and API client together.
// Events are delegated from the root container since innerHTML re-rendering
// replaces inner nodes on every dispatch.

import { ApiError, ChatApi } from "./api.js";
import { render } from "./render.js";
import {
  chatPayload,
  initialState,
  reduce,
  type Action,
  type ChatViewState,
} from "./state.js";

const api = new ChatApi();
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

let state: ChatViewState = initialState;

function dispatch(action: Action): void {
  state = reduce(state, action);
  root!.innerHTML = render(state);
}

function describe(e: unknown): string {
  if (e instanceof ApiError) return `${e.status}: ${e.message}`;
  return e instanceof Error ? e.message : String(e);
}

async function send(text: string): Promise<void> {
  dispatch({ type: "sent", text });
  try {
    const response = await api.chat(chatPayload(state, text));
    dispatch({ type: "replied", response });
  } catch (e) {
    dispatch({ type: "failed", message: describe(e) });
  }
}

root.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const input = root.querySelector<HTMLInputElement>(
    "[data-testid='chat-input']",
  );
  const text = input?.value.trim();
  if (text) void send(text);
});

root.addEventListener("change", (ev) => {
  const el = ev.target as HTMLElement;
  if (el.matches("[data-testid='skill-select']")) {
    const value = (el as HTMLSelectElement).value;
    if (value === "auto") dispatch({ type: "auto_mode" });
    else dispatch({ type: "manual_mode", skillId: Number(value) });
  }
});

root.addEventListener("click", (ev) => {
  const el = ev.target as HTMLElement;
  if (el.matches("[data-testid='clear']")) {
    if (state.sessionId) void api.deleteSession(state.sessionId).catch(() => {});
    dispatch({ type: "cleared" });
  }
});

dispatch({ type: "skills_loaded", skills: [] }); // first paint
api
  .skills()
  .then((skills) => dispatch({ type: "skills_loaded", skills }))
  .catch((e) => dispatch({ type: "failed", message: describe(e) }));
