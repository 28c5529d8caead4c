/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const battery_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const compare_mac: (a: number, b: bigint) => [number, number];
export const link_budget_curve: (a: number, b: number, c: number, d: number) => [number, number];
export const max_range_m: (a: number, b: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
