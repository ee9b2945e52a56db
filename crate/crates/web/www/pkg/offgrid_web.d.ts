/* tslint:disable */
/* eslint-disable */

export class DemoOutcome {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly iterations: number;
    readonly nmse_offgrid: number;
    readonly nmse_ongrid: number;
    /**
     * Refined azimuth of every atom, degrees.
     */
    readonly offgrid_deg: Float64Array;
    /**
     * `|μ_l|²` per atom.
     */
    readonly offgrid_power: Float64Array;
    readonly ongrid_deg: Float64Array;
    readonly ongrid_power: Float64Array;
    readonly true_deg: Float64Array;
    readonly true_power: Float64Array;
}

export function beamPattern(geometry: string, carrier_hz: number, steer_deg: number, elevation_deg: number, points: number): Float64Array;

export function layoutText(kind: string, elements: number): string;

export function leakageMap(antennas: number, d_over_lambda: number, from_deg: number, to_deg: number, points: number): Float64Array;

export function runDemo(antennas: number, paths: number, pilots: number, snr_db: number, grid_size: number, seed: number): DemoOutcome;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demooutcome_free: (a: number, b: number) => void;
    readonly beamPattern: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demooutcome_iterations: (a: number) => number;
    readonly demooutcome_nmse_offgrid: (a: number) => number;
    readonly demooutcome_nmse_ongrid: (a: number) => number;
    readonly demooutcome_offgrid_deg: (a: number) => [number, number];
    readonly demooutcome_offgrid_power: (a: number) => [number, number];
    readonly demooutcome_ongrid_deg: (a: number) => [number, number];
    readonly demooutcome_ongrid_power: (a: number) => [number, number];
    readonly demooutcome_true_deg: (a: number) => [number, number];
    readonly demooutcome_true_power: (a: number) => [number, number];
    readonly layoutText: (a: number, b: number, c: number) => [number, number, number, number];
    readonly leakageMap: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly runDemo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
