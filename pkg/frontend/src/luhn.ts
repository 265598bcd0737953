/** Client-side card-number checks. These mirror the server's rules for
 * immediate feedback only — the server stays authoritative. */

/** Digits of `text` with spaces and dashes stripped. */
export function digitsOf(text: string): string {
  return text.replace(/[ -]/g, "");
}

/** Mod-10 checksum over a string of digits. */
export function luhnValid(pan: string): boolean {
  if (!/^\d+$/.test(pan)) return false;
  let total = 0;
  for (let i = 0; i < pan.length; i++) {
    let d = pan.charCodeAt(pan.length - 1 - i) - 48;
    if (i % 2 === 1) {
      d *= 2;
      if (d > 9) d -= 9;
    }
    total += d;
  }
  return total % 10 === 0;
}

/** True for a well-formed 16-digit card number (separators allowed). */
export function panValid(raw: string): boolean {
  const digits = digitsOf(raw);
  return digits.length === 16 && luhnValid(digits);
}

export function maskPan(raw: string): string {
  const digits = digitsOf(raw);
  return "**** **** **** " + digits.slice(-4);
}

export function last4(raw: string): string {
  return digitsOf(raw).slice(-4);
}

/** Group a 16-digit number into the conventional 4x4 layout. */
export function groupPan(raw: string): string {
  const digits = digitsOf(raw);
  return digits.replace(/(.{4})(?=.)/g, "$1 ");
}
