// Renders the chat view to an HTML string. String building (rather than
// direct DOM construction) keeps rendering snapshot-testable under plain
// node; main.ts assigns the result to a container's innerHTML.

import type { Candidate, Knowledge, SkillInfo } from "./api.js";
import type { ChatViewState, Message } from "./state.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function skillName(skills: SkillInfo[], id: number | null): string {
  const hit = skills.find((s) => s.skill_id === id);
  return hit ? hit.name : `skill ${id}`;
}

function badge(skills: SkillInfo[], m: Message): string {
  const label = `${skillName(skills, m.skillId)} #${m.skillId}`;
  const conf =
    m.confidence === null ? "" : ` · ${(m.confidence * 100).toFixed(0)}%`;
  return (
    `<span class="badge" data-testid="skill-badge">` +
    `${escapeHtml(label)}${conf}</span>`
  );
}

function knowledgePanel(k: Knowledge): string {
  switch (k.variant) {
    case "none":
      return "";
    case "text":
      return (
        `<blockquote data-testid="knowledge-text">` +
        `${escapeHtml(k.paragraph)}</blockquote>`
      );
    case "table": {
      const rows = k.rows
        .map(
          ([slot, value]) =>
            `<tr><th>${escapeHtml(slot)}</th><td>${escapeHtml(value)}</td></tr>`,
        )
        .join("");
      return `<table data-testid="knowledge-table">${rows}</table>`;
    }
    case "graph": {
      const items = k.triples
        .map((t) => `<li>${escapeHtml(t.join(" → "))}</li>`)
        .join("");
      return `<ul data-testid="knowledge-graph">${items}</ul>`;
    }
  }
}

function candidatesPanel(cands: Candidate[]): string {
  const items = cands
    .map(
      (c) =>
        `<li${c.chosen ? ' class="chosen"' : ""}>${escapeHtml(c.text)}` +
        ` <small>${c.score.toFixed(3)}</small></li>`,
    )
    .join("");
  return (
    `<details data-testid="candidates">` +
    `<summary>${cands.length} candidates</summary>` +
    `<ol>${items}</ol></details>`
  );
}

function messageHtml(skills: SkillInfo[], m: Message): string {
  const parts: string[] = [];
  if (m.speaker === "system") parts.push(badge(skills, m));
  parts.push(`<p class="text">${escapeHtml(m.text)}</p>`);
  if (m.speaker === "system") {
    if (m.filtered)
      parts.push(
        `<span data-testid="filtered-flag">response withheld</span>`,
      );
    if (m.knowledge) parts.push(knowledgePanel(m.knowledge));
    if (m.candidates && m.candidates.length)
      parts.push(candidatesPanel(m.candidates));
  }
  return (
    `<li class="message ${m.speaker}" data-testid="message" ` +
    `data-speaker="${m.speaker}">${parts.join("")}</li>`
  );
}

function skillPicker(state: ChatViewState): string {
  const opts = [
    `<option value="auto"${state.mode === "auto" ? " selected" : ""}>auto</option>`,
  ];
  for (const s of state.skills) {
    const selected =
      state.mode === "manual" && state.skillId === s.skill_id
        ? " selected"
        : "";
    opts.push(
      `<option value="${s.skill_id}"${selected}>` +
        `${escapeHtml(s.name)} (${escapeHtml(s.family)})</option>`,
    );
  }
  return `<select data-testid="skill-select">${opts.join("")}</select>`;
}

export function render(state: ChatViewState): string {
  const messages = state.messages
    .map((m) => messageHtml(state.skills, m))
    .join("\n");
  const pending = state.pending
    ? `<p data-testid="pending">thinking…</p>`
    : "";
  const error = state.error
    ? `<p class="error" data-testid="error">${escapeHtml(state.error)}</p>`
    : "";
  return [
    `<header>`,
    skillPicker(state),
    `<button type="button" data-testid="clear">new session</button>`,
    `</header>`,
    `<ol class="transcript" data-testid="transcript">`,
    messages,
    `</ol>`,
    pending,
    error,
    `<form data-testid="composer">`,
    `<input data-testid="chat-input" autocomplete="off"` +
      ` placeholder="say something"${state.pending ? " disabled" : ""}>`,
    `<button type="submit"${state.pending ? " disabled" : ""}>send</button>`,
    `</form>`,
  ].join("\n");
}
