// HTML string renderers. Kept free of DOM APIs so the same templates are
// exercised by the node test suite and by the browser entry point.

import type { CharacterForm } from "./types.js";
import type { FeedEntry, MeterView, ViewModel } from "./view.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const trendClass = (arrow: MeterView["arrow"]) =>
  arrow === "▲" ? "trend-up" : arrow === "▼" ? "trend-down" : "trend-flat";

export function renderMeters(meters: MeterView[]): string {
  const rows = meters
    .map(
      (m) => `<div class="meter" data-meter="${m.name}">
  <span class="meter-label">${m.name}</span>
  <div class="meter-bar"><div class="meter-fill" style="width:${m.value}%"></div></div>
  <span class="meter-val">${m.value}</span>
  <span class="trend ${trendClass(m.arrow)}">${m.arrow}${m.delta !== 0 ? " " + (m.delta > 0 ? "+" : "") + m.delta : ""}</span>
</div>`,
    )
    .join("\n");
  return `<section class="meters">\n${rows}\n</section>`;
}

export function renderChips(chips: string[]): string {
  if (chips.length === 0) {
    return `<section class="chips"><span class="chips-empty">No places yet. Mention one in a turn to create it.</span></section>`;
  }
  const buttons = chips
    .map((name) => `<button class="chip" data-env="${escapeHtml(name)}">${escapeHtml(name)}</button>`)
    .join("");
  return `<section class="chips">${buttons}</section>`;
}

function renderEntry(entry: FeedEntry): string {
  if (entry.pending) {
    return `<article class="feed-entry pending" data-round="${entry.round}">
  <p class="feed-input">&gt; ${escapeHtml(entry.userInput)}</p>
  <p class="feed-thinking">thinking&hellip;</p>
</article>`;
  }
  const input = entry.userInput
    ? `<p class="feed-input">&gt; ${escapeHtml(entry.userInput)}</p>`
    : "";
  const image = entry.imageRef
    ? `<figure class="turn-image" data-image-ref="${escapeHtml(entry.imageRef)}">
    <figcaption>${escapeHtml(entry.imagePrompt)}</figcaption>
  </figure>`
    : "";
  const time =
    entry.receivedAt !== null
      ? `<time datetime="${new Date(entry.receivedAt).toISOString()}">${new Date(entry.receivedAt).toLocaleTimeString()}</time>`
      : "";
  return `<article class="feed-entry" data-round="${entry.round}">
  ${input}
  <p class="feed-narrative">${escapeHtml(entry.narrative)}</p>
  ${image}
  <footer class="feed-meta">${time}<span class="latency-badge">${entry.latencyLabel}</span></footer>
</article>`;
}

export function renderFeed(feed: FeedEntry[]): string {
  return `<section class="feed">\n${feed.map(renderEntry).join("\n")}\n</section>`;
}

export function renderInput(draft: string, enabled: boolean, notice: string | null): string {
  const noticeHtml = notice ? `<p class="notice">${escapeHtml(notice)}</p>` : "";
  return `<section class="turn-input">
  ${noticeHtml}
  <textarea id="turn-input" rows="2" placeholder="What happens next?"${enabled ? "" : " disabled"}>${escapeHtml(draft)}</textarea>
  <button data-action="send"${enabled ? "" : " disabled"}>Send</button>
</section>`;
}

const FORM_FIELDS: Array<{ key: keyof CharacterForm; label: string; hint: string }> = [
  { key: "name", label: "Name", hint: "Archibus" },
  { key: "descriptor", label: "Appearance", hint: "a small owl wizard" },
  { key: "personality", label: "Personality", hint: "bookish and kind" },
  { key: "home", label: "Home (optional)", hint: "Cozy Home" },
];

export function renderCreateForm(
  form: CharacterForm,
  errors: Partial<Record<string, string>>,
  banner: string | null,
): string {
  const bannerHtml = banner
    ? `<div class="banner">${escapeHtml(banner)} <button data-action="retry">Retry</button></div>`
    : "";
  const fields = FORM_FIELDS.map(({ key, label, hint }) => {
    const err = errors[key] ? `<span class="field-error">${escapeHtml(errors[key]!)}</span>` : "";
    return `<label class="form-field">${label}
  <input data-field="${key}" value="${escapeHtml(form[key])}" placeholder="${hint}">
  ${err}
</label>`;
  }).join("\n");
  return `<section class="create-form">
  <h1>Create a character</h1>
  ${bannerHtml}
  ${fields}
  <button data-action="create">Begin</button>
</section>`;
}

export function renderApp(vm: ViewModel | null, form: CharacterForm, errors: Partial<Record<string, string>>, banner: string | null): string {
  if (vm === null) {
    return renderCreateForm(form, errors, banner);
  }
  return `<header class="session-header"><h1>${escapeHtml(vm.characterName)}</h1></header>
${renderMeters(vm.meters)}
${renderChips(vm.chips)}
${renderFeed(vm.feed)}
${renderInput(vm.draft, vm.inputEnabled, vm.notice)}`;
}
