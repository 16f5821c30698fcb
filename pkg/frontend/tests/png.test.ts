import { PNG } from "pngjs";
import { describe, expect, it } from "vitest";

import { MaskLayer } from "../src/mask";
import {
  adler32,
  base64ToBytes,
  bytesToBase64,
  crc32,
  encodeGrayPng,
} from "../src/png";

/** Decode with pngjs (independent codec) and return the gray raster. */
function decodeWithPngjs(bytes: Uint8Array): {
  raster: Uint8Array;
  width: number;
  height: number;
} {
  const png = PNG.sync.read(Buffer.from(bytes));
  const raster = new Uint8Array(png.width * png.height);
  for (let i = 0; i < raster.length; i++) {
    // pngjs expands to RGBA; gray input means R=G=B
    raster[i] = png.data[i * 4];
    expect(png.data[i * 4 + 1]).toBe(raster[i]);
    expect(png.data[i * 4 + 2]).toBe(raster[i]);
    expect(png.data[i * 4 + 3]).toBe(255);
  }
  return { raster, width: png.width, height: png.height };
}

describe("grayscale PNG encoder", () => {
  it("round trips a painted mask byte-for-byte", () => {
    const mask = new MaskLayer(48, 32);
    mask.applyStroke([
      { x: 10, y: 10, radius: 6 },
      { x: 36, y: 20, radius: 6 },
    ]);
    mask.applyStroke([{ x: 20, y: 5, radius: 3, erase: true }]);
    const painted = mask.raster();
    const png = encodeGrayPng(painted, mask.width, mask.height);
    const decoded = decodeWithPngjs(png);
    expect(decoded.width).toBe(48);
    expect(decoded.height).toBe(32);
    expect(decoded.raster).toEqual(painted);
  });

  it("round trips arbitrary gray values", () => {
    const w = 300; // wide enough that IDAT spans multiple stored blocks
    const h = 250;
    const raster = new Uint8Array(w * h);
    for (let i = 0; i < raster.length; i++) {
      raster[i] = (i * 7 + (i >> 5)) & 0xff;
    }
    const decoded = decodeWithPngjs(encodeGrayPng(raster, w, h));
    expect(decoded.raster).toEqual(raster);
  });

  it("is deterministic", () => {
    const raster = new Uint8Array([0, 64, 128, 255]);
    const a = encodeGrayPng(raster, 2, 2);
    const b = encodeGrayPng(raster, 2, 2);
    expect(a).toEqual(b);
  });

  it("rejects a raster/dimension mismatch", () => {
    expect(() => encodeGrayPng(new Uint8Array(5), 2, 2)).toThrow();
  });

  it("carries the PNG signature and IHDR fields", () => {
    const png = encodeGrayPng(new Uint8Array(6), 3, 2);
    expect([...png.slice(0, 8)]).toEqual([
      0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a,
    ]);
    const view = new DataView(png.buffer, png.byteOffset);
    expect(view.getUint32(16)).toBe(3); // width
    expect(view.getUint32(20)).toBe(2); // height
    expect(png[24]).toBe(8); // bit depth
    expect(png[25]).toBe(0); // grayscale
  });
});

describe("checksums", () => {
  it("crc32 matches the reference value for 'IEND'", () => {
    const iend = new Uint8Array([0x49, 0x45, 0x4e, 0x44]);
    expect(crc32(iend)).toBe(0xae426082);
  });

  it("adler32 matches zlib for a known string", () => {
    const wiki = new TextEncoder().encode("Wikipedia");
    expect(adler32(wiki)).toBe(0x11e60398);
  });
});

describe("base64 helpers", () => {
  it("round trip arbitrary bytes", () => {
    const bytes = new Uint8Array(70000);
    for (let i = 0; i < bytes.length; i++) bytes[i] = (i * 31) & 0xff;
    expect(base64ToBytes(bytesToBase64(bytes))).toEqual(bytes);
  });

  it("agrees with Buffer's base64", () => {
    const bytes = new Uint8Array([0, 1, 2, 250, 251, 252]);
    expect(bytesToBase64(bytes)).toBe(Buffer.from(bytes).toString("base64"));
  });
});
