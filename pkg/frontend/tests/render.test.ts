import { beforeEach, describe, expect, it } from "vitest";

import { luhnValid } from "../src/luhn.js";
import {
  nodeLabel,
  renderBanner,
  renderCardPanel,
  renderForm,
  renderTraceTimeline,
  renderTranscript,
  showFieldErrors,
} from "../src/render.js";
import type { Bubble } from "../src/session.js";
import type { InterruptPayload, TraceRow } from "../src/types.js";

const CARD_INTERRUPT: InterruptPayload = {
  interrupt_id: "sess_000001:0:0",
  workflow: "wf_card_registration",
  prompt_text: "Please provide your card number, expiry date (MM/YY), and CVV.",
  fields_requested: [
    { name: "pan", kind: "pan16", validation_hint: "16-digit card number" },
    { name: "expiry", kind: "expiry_mmYY", validation_hint: "expiry as MM/YY" },
    { name: "cvv", kind: "cvv3", validation_hint: "3-digit security code" },
  ],
};

/** Luhn-valid 16-digit runs in a blob of markup. */
function luhnRuns(text: string): string[] {
  const runs = text.match(/(?:\d[ -]?){16}/g) ?? [];
  return runs
    .map((run) => run.replace(/\D/g, ""))
    .filter((digits) => digits.length === 16 && luhnValid(digits));
}

let mount: HTMLDivElement;

beforeEach(() => {
  mount = document.createElement("div");
  document.body.replaceChildren(mount);
});

describe("interrupt form", () => {
  it("renders one typed input per requested field", () => {
    renderForm(mount, CARD_INTERRUPT, () => {});
    const inputs = mount.querySelectorAll("input");
    expect(inputs).toHaveLength(3);
    expect([...inputs].map((i) => i.dataset.kind)).toEqual([
      "pan16",
      "expiry_mmYY",
      "cvv3",
    ]);
    expect([...inputs].map((i) => i.name)).toEqual(["pan", "expiry", "cvv"]);
  });

  it("submit collects values and field errors render inline", () => {
    let got: Record<string, string> | null = null;
    const form = renderForm(mount, CARD_INTERRUPT, (values) => {
      got = values;
    });
    (form.querySelector('input[name="pan"]') as HTMLInputElement).value =
      "4242424242424243";
    form.dispatchEvent(new Event("submit", { cancelable: true }));
    expect(got).toEqual({ pan: "4242424242424243", expiry: "", cvv: "" });

    showFieldErrors(form, { pan: "checksum failed", cvv: "required" });
    const slot = (name: string) =>
      form.querySelector(`[data-error-for="${name}"]`)!.textContent;
    expect(slot("pan")).toBe("checksum failed");
    expect(slot("cvv")).toBe("required");
    expect(slot("expiry")).toBe("");
  });
});

describe("trace timeline", () => {
  const REGISTRATION_TRACE: TraceRow[] = [
    { from: "cpa", to: "cards_supervisor", turn_id: 0 },
    { from: "cards_supervisor", to: "router_card_registration", turn_id: 0 },
    { from: "router_card_registration", to: "wf_card_registration", turn_id: 0 },
    { from: "wf_card_registration", to: "summary_card_registration", turn_id: 0 },
    { from: "summary_card_registration", to: "cards_supervisor", turn_id: 0 },
    { from: "cards_supervisor", to: "cpa", turn_id: 0 },
  ];

  it("renders the chips in hop order", () => {
    renderTraceTimeline(mount, 0, REGISTRATION_TRACE);
    const chips = [...mount.querySelectorAll(".chip")].map((c) => c.textContent);
    expect(chips).toEqual([
      "CPA",
      "Cards Supervisor",
      "Card Registration Router",
      "Card Registration Workflow",
      "Card Registration Summary",
      "Cards Supervisor",
      "CPA",
    ]);
    expect(mount.querySelectorAll(".arrow")).toHaveLength(6);
  });

  it("empty trace renders the rejected-at-CPA badge", () => {
    renderTraceTimeline(mount, 3, []);
    expect(mount.querySelector(".badge.rejected")?.textContent).toBe(
      "rejected at CPA",
    );
    expect(mount.querySelectorAll(".chip")).toHaveLength(0);
  });

  it("missing trace renders a placeholder", () => {
    renderTraceTimeline(mount, 9, null);
    expect(mount.querySelector(".trace-placeholder")?.textContent).toBe("no trace");
  });

  it("labels fall back to prettified ids", () => {
    expect(nodeLabel("cards_supervisor")).toBe("Cards Supervisor");
    expect(nodeLabel("some_new_node")).toBe("Some New Node");
  });
});

describe("cards panel and transcript", () => {
  it("shows masked numbers only", () => {
    renderCardPanel(mount, [
      {
        card_id: "card_000001",
        masked_pan: "**** **** **** 4242",
        holder_name: "Dana Smith",
        expiry: "12/33",
      },
    ]);
    expect(mount.textContent).toContain("**** **** **** 4242");
    expect(luhnRuns(mount.innerHTML)).toEqual([]);
  });

  it("empty panel has a friendly placeholder", () => {
    renderCardPanel(mount, []);
    expect(mount.textContent).toContain("No saved cards yet.");
  });

  it("transcript renders bubbles and a trace button per finished turn", () => {
    const bubbles: Bubble[] = [
      { speaker: "user", text: "register a card" },
      { speaker: "cpa", text: "Saved your card ending 4242.", turnId: 0 },
    ];
    const clicks: number[] = [];
    renderTranscript(mount, bubbles, (turnId) => clicks.push(turnId));
    expect(mount.querySelectorAll(".bubble")).toHaveLength(2);
    const button = mount.querySelector<HTMLButtonElement>(".trace-button")!;
    button.click();
    expect(clicks).toEqual([0]);
  });

  it("banner renders message and retry hook", () => {
    let retried = 0;
    renderBanner(mount, "backend_unreachable: nothing answered", () => {
      retried += 1;
    });
    expect(mount.querySelector(".banner.error")).not.toBeNull();
    mount.querySelector<HTMLButtonElement>(".retry")!.click();
    expect(retried).toBe(1);
  });
});
