/**
 * Binary prompt-mask layer the user paints over the image pair.
 *
 * The raster is a Uint8Array of 0 (background) / 255 (masked) values, one
 * byte per pixel, matching the 8-bit grayscale PNG sent over the wire.
 * Every committed stroke pushes an undo snapshot.
 */

export interface Stroke {
  x: number;
  y: number;
  radius: number;
  erase?: boolean;
}

const UNDO_DEPTH = 20; // contract requires >= 10

export class MaskLayer {
  readonly width: number;
  readonly height: number;
  private data: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(width: number, height: number) {
    if (width <= 0 || height <= 0) {
      throw new Error(`bad mask dimensions ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  /** Copy of the current raster (row-major, 0/255). */
  raster(): Uint8Array {
    return this.data.slice();
  }

  isEmpty(): boolean {
    return this.data.every((v) => v === 0);
  }

  at(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  private snapshot(): void {
    this.undoStack.push(this.data.slice());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
  }

  undoDepth(): number {
    return this.undoStack.length;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.data = prev;
    return true;
  }

  clear(): void {
    this.snapshot();
    this.data.fill(0);
  }

  fill(): void {
    this.snapshot();
    this.data.fill(255);
  }

  /** Stamp one circular brush dab without touching the undo stack (used
   *  for the intermediate points of a drag). */
  stamp(stroke: Stroke): void {
    const value = stroke.erase ? 0 : 255;
    const r = Math.max(0, stroke.radius);
    const r2 = r * r;
    const x0 = Math.max(0, Math.floor(stroke.x - r));
    const x1 = Math.min(this.width - 1, Math.ceil(stroke.x + r));
    const y0 = Math.max(0, Math.floor(stroke.y - r));
    const y1 = Math.min(this.height - 1, Math.ceil(stroke.y + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - stroke.x;
        const dy = y - stroke.y;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** One committed stroke: snapshot, then stamp along the polyline. */
  applyStroke(points: Stroke[]): void {
    if (points.length === 0) return;
    this.snapshot();
    let prev = points[0];
    this.stamp(prev);
    for (const p of points.slice(1)) {
      // interpolate so fast drags leave no gaps
      const steps = Math.max(
        1,
        Math.ceil(Math.hypot(p.x - prev.x, p.y - prev.y)),
      );
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp({
          x: prev.x + (p.x - prev.x) * t,
          y: prev.y + (p.y - prev.y) * t,
          radius: p.radius,
          erase: p.erase,
        });
      }
      prev = p;
    }
  }
}
