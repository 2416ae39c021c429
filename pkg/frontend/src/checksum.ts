/** FNV-1a 32-bit checksum over raw bytes, reported as 8 hex digits.
 * Used to assert that the bitmap handed to the display is byte-for-byte
 * the bitmap the service sent. */

export function fnv1a(bytes: Uint8Array): string {
  let hash = 0x811c9dc5;
  for (let i = 0; i < bytes.length; i++) {
    hash ^= bytes[i];
    // 32-bit FNV prime multiply via shifts to stay in integer range
    hash =
      (hash + ((hash << 1) + (hash << 4) + (hash << 7) + (hash << 8) + (hash << 24))) >>>
      0;
  }
  return hash.toString(16).padStart(8, "0");
}
