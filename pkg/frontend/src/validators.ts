/** Per-field pre-checks for interrupt forms. Failures never reach the
 * network; passes are still re-validated by the server. */

import { digitsOf, groupPan, luhnValid, maskPan } from "./luhn.js";
import type { FieldKind, FieldSpec } from "./types.js";

export type FieldCheck =
  | { ok: true; cleaned: string }
  | { ok: false; error: string };

export function checkField(kind: FieldKind, raw: string): FieldCheck {
  const value = raw.trim();
  if (!value) return { ok: false, error: "required" };

  switch (kind) {
    case "pan16": {
      const digits = digitsOf(value);
      if (!/^\d+$/.test(digits)) return { ok: false, error: "digits only" };
      if (digits.length !== 16)
        return { ok: false, error: "must be 16 digits" };
      if (!luhnValid(digits)) return { ok: false, error: "checksum failed" };
      return { ok: true, cleaned: digits };
    }
    case "expiry_mmYY": {
      if (!/^(0?[1-9]|1[0-2])\/\d{2}$/.test(value))
        return { ok: false, error: "use MM/YY" };
      const [mm, yy] = value.split("/") as [string, string];
      return { ok: true, cleaned: `${mm.padStart(2, "0")}/${yy}` };
    }
    case "cvv3": {
      if (!/^\d{3}$/.test(value)) return { ok: false, error: "must be 3 digits" };
      return { ok: true, cleaned: value };
    }
    case "otp6": {
      if (!/^\d{6}$/.test(value)) return { ok: false, error: "must be 6 digits" };
      return { ok: true, cleaned: value };
    }
    case "card_choice_index": {
      if (!/^\d+$/.test(value) || Number(value) < 1)
        return { ok: false, error: "enter the card's number from the list" };
      return { ok: true, cleaned: value };
    }
    case "amount": {
      if (!/^\$?\d+(\.\d{1,2})?$/.test(value))
        return { ok: false, error: "enter an amount like $25.00" };
      return { ok: true, cleaned: value.startsWith("$") ? value : `$${value}` };
    }
  }
}

/** Check every requested field; `errors` is empty exactly when all pass. */
export function checkForm(
  fields: FieldSpec[],
  values: Record<string, string>,
): { cleaned: Record<string, string>; errors: Record<string, string> } {
  const cleaned: Record<string, string> = {};
  const errors: Record<string, string> = {};
  for (const field of fields) {
    const result = checkField(field.kind, values[field.name] ?? "");
    if (result.ok) cleaned[field.name] = result.cleaned;
    else errors[field.name] = result.error;
  }
  return { cleaned, errors };
}

/** The resume text sent to the server, in the shape its parsers expect,
 * e.g. "4242 4242 4242 4242, 12/33, cvv 123". */
export function composeResumeText(
  fields: FieldSpec[],
  cleaned: Record<string, string>,
): string {
  const parts = fields.map((field) => {
    const value = cleaned[field.name] ?? "";
    switch (field.kind) {
      case "pan16":
        return groupPan(value);
      case "cvv3":
        return `cvv ${value}`;
      default:
        return value;
    }
  });
  return parts.join(", ");
}

/** What the transcript shows for a submitted form: never the full card
 * number, never the security code. */
export function composeDisplayText(
  fields: FieldSpec[],
  cleaned: Record<string, string>,
): string {
  const parts = fields.map((field) => {
    const value = cleaned[field.name] ?? "";
    switch (field.kind) {
      case "pan16":
        return maskPan(value);
      case "cvv3":
        return "cvv ***";
      case "otp6":
        return "otp ******";
      default:
        return value;
    }
  });
  return parts.join(", ");
}
