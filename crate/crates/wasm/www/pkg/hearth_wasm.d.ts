/* tslint:disable */
/* eslint-disable */

/**
 * Battery lifetime in years for each report interval (seconds). A
 * `poll_interval_s` of zero means the device never polls.
 */
export function battery_curve(rate_bps: number, report_bytes: number, poll_interval_s: number, intervals_s: Float64Array): Float64Array;

/**
 * [`compare_modes`] as JSON for the page.
 */
export function compare_mac(senders: number, seed: bigint): string;

/**
 * Link margin in dB at `points` evenly spaced distances up to
 * `max_distance_m`, interleaved as `[d0, m0, d1, m1, ...]`.
 */
export function link_budget_curve(indoor: boolean, tx_power_dbm: number, max_distance_m: number, points: number): Float64Array;

/**
 * Distance at which the margin reaches zero.
 */
export function max_range_m(indoor: boolean, tx_power_dbm: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly battery_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly compare_mac: (a: number, b: bigint) => [number, number];
    readonly link_budget_curve: (a: number, b: number, c: number, d: number) => [number, number];
    readonly max_range_m: (a: number, b: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
