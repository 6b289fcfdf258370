// Chat screen view state. A plain reducer keeps every transition
// unit-testable in node; main.ts owns the single mutable reference.

import type {
  Candidate,
  ChatRequest,
  ChatResponse,
  Knowledge,
  SkillInfo,
} from "./api.js";

export interface Message {
  speaker: "user" | "system";
  text: string;
  skillId: number | null;
  confidence: number | null;
  knowledge: Knowledge | null;
  candidates: Candidate[] | null;
  filtered: boolean;
}

export interface ChatViewState {
  sessionId: string | null;
  skills: SkillInfo[];
  mode: "auto" | "manual";
  skillId: number | null;
  styleId: number | null;
  messages: Message[];
  pending: boolean;
  error: string | null;
}

export const initialState: ChatViewState = {
  sessionId: null,
  skills: [],
  mode: "auto",
  skillId: null,
  styleId: null,
  messages: [],
  pending: false,
  error: null,
};

export type Action =
  | { type: "skills_loaded"; skills: SkillInfo[] }
  | { type: "auto_mode" }
  | { type: "manual_mode"; skillId: number }
  | { type: "style_picked"; styleId: number | null }
  | { type: "sent"; text: string }
  | { type: "replied"; response: ChatResponse }
  | { type: "failed"; message: string }
  | { type: "cleared" };

export function reduce(state: ChatViewState, action: Action): ChatViewState {
  switch (action.type) {
    case "skills_loaded":
      return { ...state, skills: action.skills };
    case "auto_mode":
      return { ...state, mode: "auto", skillId: null };
    case "manual_mode":
      return { ...state, mode: "manual", skillId: action.skillId };
    case "style_picked":
      return { ...state, styleId: action.styleId };
    case "sent":
      return {
        ...state,
        pending: true,
        error: null,
        messages: [...state.messages, userMessage(action.text)],
      };
    case "replied":
      return {
        ...state,
        pending: false,
        sessionId: action.response.session_id,
        messages: [...state.messages, systemMessage(action.response)],
      };
    case "failed":
      return { ...state, pending: false, error: action.message };
    case "cleared":
      return { ...state, sessionId: null, messages: [], error: null };
  }
}

function userMessage(text: string): Message {
  return {
    speaker: "user",
    text,
    skillId: null,
    confidence: null,
    knowledge: null,
    candidates: null,
    filtered: false,
  };
}

// server reply fields are kept verbatim so the view can't drift from the wire
function systemMessage(r: ChatResponse): Message {
  return {
    speaker: "system",
    text: r.text,
    skillId: r.skill_id,
    confidence: r.confidence,
    knowledge: r.knowledge,
    candidates: r.candidates,
    filtered: r.filtered,
  };
}

/** Request body for the next turn under the current mode and selections. */
export function chatPayload(state: ChatViewState, text: string): ChatRequest {
  const req: ChatRequest = { text, mode: state.mode };
  if (state.sessionId !== null) req.session_id = state.sessionId;
  if (state.mode === "manual" && state.skillId !== null)
    req.skill_id = state.skillId;
  if (state.styleId !== null) req.style_id = state.styleId;
  return req;
}
