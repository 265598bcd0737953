/** DOM builders. Everything here is a pure function of its inputs so the
 * tests can render into a detached element and inspect it. */

import type { Bubble } from "./session.js";
import type { CardRow, InterruptPayload, TraceRow } from "./types.js";

const NODE_LABELS: Record<string, string> = {
  cpa: "CPA",
  cards_supervisor: "Cards Supervisor",
  payments_supervisor: "Payments Supervisor",
  router_card_registration: "Card Registration Router",
  router_card_retrieval: "Card Retrieval Router",
  router_payment: "Payment Router",
  wf_card_registration: "Card Registration Workflow",
  wf_card_retrieval: "Card Retrieval Workflow",
  wf_payment: "Payment Workflow",
  summary_card_registration: "Card Registration Summary",
  summary_card_retrieval: "Card Retrieval Summary",
  summary_payment: "Payment Summary",
};

export function nodeLabel(id: string): string {
  return (
    NODE_LABELS[id] ??
    id.replace(/_/g, " ").replace(/\b\w/g, (c) => c.toUpperCase())
  );
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderTranscript(
  container: HTMLElement,
  bubbles: readonly Bubble[],
  onShowTrace: (turnId: number) => void,
): void {
  container.replaceChildren();
  for (const bubble of bubbles) {
    const row = el("div", `bubble ${bubble.speaker}`);
    row.appendChild(el("span", "speaker", bubble.speaker === "user" ? "you" : "assistant"));
    row.appendChild(el("span", "text", bubble.text));
    if (bubble.turnId !== undefined) {
      const button = el("button", "trace-button", "trace");
      button.type = "button";
      button.dataset.turn = String(bubble.turnId);
      button.addEventListener("click", () => onShowTrace(bubble.turnId!));
      row.appendChild(button);
    }
    container.appendChild(row);
  }
}

export function renderForm(
  container: HTMLElement,
  interrupt: InterruptPayload,
  onSubmit: (values: Record<string, string>) => void,
): HTMLFormElement {
  container.replaceChildren();
  const form = el("form", "interrupt-form");
  form.noValidate = true;

  for (const field of interrupt.fields_requested) {
    const wrap = el("div", "field");
    const label = el("label", undefined, field.name);
    label.htmlFor = `field-${field.name}`;
    wrap.appendChild(label);

    const input = el("input");
    input.id = `field-${field.name}`;
    input.name = field.name;
    input.dataset.kind = field.kind;
    input.placeholder = field.validation_hint;
    input.autocomplete = "off";
    wrap.appendChild(input);

    const error = el("span", "field-error");
    error.dataset.errorFor = field.name;
    wrap.appendChild(error);
    form.appendChild(wrap);
  }

  const submit = el("button", "submit", "Submit");
  submit.type = "submit";
  form.appendChild(submit);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const values: Record<string, string> = {};
    for (const field of interrupt.fields_requested) {
      const input = form.querySelector<HTMLInputElement>(
        `input[name="${field.name}"]`,
      );
      values[field.name] = input?.value ?? "";
    }
    onSubmit(values);
  });

  container.appendChild(form);
  return form;
}

export function showFieldErrors(
  form: HTMLFormElement,
  errors: Record<string, string>,
): void {
  for (const slot of form.querySelectorAll<HTMLElement>(".field-error"))
    slot.textContent = errors[slot.dataset.errorFor ?? ""] ?? "";
}

export function renderTraceTimeline(
  container: HTMLElement,
  turnId: number,
  rows: TraceRow[] | null,
): void {
  container.replaceChildren();
  container.appendChild(el("h3", undefined, `Turn ${turnId}`));

  if (rows === null) {
    container.appendChild(el("div", "trace-placeholder", "no trace"));
    return;
  }
  if (rows.length === 0) {
    container.appendChild(el("span", "badge rejected", "rejected at CPA"));
    return;
  }

  const timeline = el("div", "timeline");
  const stops: string[] = [rows[0]!.from];
  for (const row of rows) stops.push(row.to);
  stops.forEach((stop, i) => {
    if (i > 0) timeline.appendChild(el("span", "arrow", "→"));
    timeline.appendChild(el("span", "chip", nodeLabel(stop)));
  });
  container.appendChild(timeline);
}

export function renderCardPanel(container: HTMLElement, cards: CardRow[]): void {
  container.replaceChildren();
  container.appendChild(el("h3", undefined, "Saved cards"));
  if (cards.length === 0) {
    container.appendChild(el("div", "empty", "No saved cards yet."));
    return;
  }
  const list = el("ul", "card-list");
  for (const card of cards) {
    const item = el("li", "card");
    item.appendChild(el("span", "masked-pan", card.masked_pan));
    item.appendChild(el("span", "holder", card.holder_name));
    item.appendChild(el("span", "expiry", card.expiry));
    list.appendChild(item);
  }
  container.appendChild(list);
}

export function renderBanner(
  container: HTMLElement,
  message: string,
  onRetry: (() => void) | null,
): void {
  container.replaceChildren();
  const banner = el("div", "banner error");
  banner.appendChild(el("span", undefined, message));
  if (onRetry) {
    const retry = el("button", "retry", "Retry");
    retry.type = "button";
    retry.addEventListener("click", onRetry);
    banner.appendChild(retry);
  }
  container.appendChild(banner);
}

export function clearBanner(container: HTMLElement): void {
  container.replaceChildren();
}
